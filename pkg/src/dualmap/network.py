"""End-to-end grounding network.

Two proposal maps are built from the enhanced clip features: one from video
features alone (scored against the query by cosine similarity through two
branches) and one from query-fused features (scored by direct regression).
The joint per-candidate score is the product of the two calibrated map scores;
single-path ablations override one factor with ones instead of rewiring the
graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from torch import nn

from .encoders import EncoderConfig, QueryEncoder, VideoEncoder
from .maps import AGGREGATIONS, MapConvNet, ValidityMask, build_validity_mask
from .scoring import (
    AgnosticHeads,
    AgnosticScores,
    HeadConfig,
    ScoreMaps,
    calibrate_agnostic,
    combine_scores,
    score_agnostic_map,
    score_conditioned_map,
)

PATH_MODES = ("dual", "agnostic_only", "conditioned_only")


@dataclass(frozen=True)
class MapConvConfig:
    agnostic_layers: int = 4
    agnostic_kernel: int = 3
    conditioned_layers: int = 3
    conditioned_kernel: int = 3
    cond_dim: int = 32  # d_C, channel count of the conditioned map

    def __post_init__(self):
        if self.agnostic_kernel % 2 == 0 or self.conditioned_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        if self.agnostic_layers < 0 or self.conditioned_layers < 0:
            raise ValueError("layer counts must be >= 0")
        if self.cond_dim < 1:
            raise ValueError(f"cond_dim must be >= 1, got {self.cond_dim}")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    map_conv: MapConvConfig = field(default_factory=MapConvConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    mask_dense_len: int = 8           # durations up to this clip span are fully enumerated
    aggregation: str = "outer_product"
    path: str = "dual"

    def __post_init__(self):
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.path not in PATH_MODES:
            raise ValueError(f"unknown path mode {self.path!r}")
        if not 1 <= self.mask_dense_len <= self.encoder.sampled_clip_count:
            raise ValueError(
                f"mask_dense_len must be in [1, {self.encoder.sampled_clip_count}],"
                f" got {self.mask_dense_len}"
            )

    @property
    def n_clips(self) -> int:
        return self.encoder.sampled_clip_count

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        return cls(
            encoder=EncoderConfig(**doc.pop("encoder")),
            map_conv=MapConvConfig(**doc.pop("map_conv")),
            head=HeadConfig(**doc.pop("head")),
            **doc,
        )


def desk_config(**overrides) -> ModelConfig:
    """Small configuration that trains in minutes on a CPU."""
    base = dict(
        encoder=EncoderConfig(hidden_dim=128, visual_dim=64, sampled_clip_count=32, heads=4),
        map_conv=MapConvConfig(cond_dim=32),
        head=HeadConfig(head_dim=64),
    )
    base.update(overrides)
    return ModelConfig(**base)


def paper_config(**overrides) -> ModelConfig:
    """Full-size configuration. The sampled clip count is undocumented
    upstream; 64 is an assumption recorded here."""
    base = dict(
        encoder=EncoderConfig(hidden_dim=512, visual_dim=1024, sampled_clip_count=64, heads=8),
        map_conv=MapConvConfig(cond_dim=128),
        head=HeadConfig(head_dim=256),
    )
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class BatchScores:
    """Stacked per-pair score tensors for a forward pass of B pairs."""

    s_iou: torch.Tensor    # (B, M)
    s_mm: torch.Tensor     # (B, M)
    p_iou: torch.Tensor    # (B, M)
    p_mm: torch.Tensor     # (B, M)
    p_a: torch.Tensor      # (B, M)
    s_c: torch.Tensor      # (B, M)
    p_c: torch.Tensor      # (B, M)
    joint: torch.Tensor    # (B, M), after any single-path override
    mm_cell_feats: torch.Tensor  # (B, M, head_dim)
    mm_query_feat: torch.Tensor  # (B, head_dim)


class GroundingNetwork(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        enc, mc = config.encoder, config.map_conv
        self.mask: ValidityMask = build_validity_mask(config.n_clips, config.mask_dense_len)
        self.video_encoder = VideoEncoder(enc)
        self.query_encoder = QueryEncoder(enc)
        self.agnostic_convnet = MapConvNet(enc.hidden_dim, mc.agnostic_layers, mc.agnostic_kernel)
        self.fuse_proj = nn.Linear(enc.hidden_dim, mc.cond_dim)
        self.conditioned_convnet = MapConvNet(mc.cond_dim, mc.conditioned_layers, mc.conditioned_kernel)
        self.heads = AgnosticHeads(enc.hidden_dim, config.head.head_dim)
        self.conditioned_head = nn.Linear(mc.cond_dim, 1)

    def encode_pairs(
        self, videos: list[torch.Tensor], token_embeds: list[torch.Tensor]
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Encode B (video, query) pairs into (B, N, d) and (B, d)."""
        if len(videos) != len(token_embeds):
            raise ValueError("one query per video required")
        clip_feats = torch.stack([self.video_encoder(v) for v in videos])
        query_vecs = torch.stack([self.query_encoder(q) for q in token_embeds])
        return clip_feats, query_vecs

    def forward(self, videos: list[torch.Tensor], token_embeds: list[torch.Tensor]) -> BatchScores:
        clip_feats, query_vecs = self.encode_pairs(videos, token_embeds)
        return self.score_pairs(clip_feats, query_vecs)

    def score_pairs(self, clip_feats: torch.Tensor, query_vecs: torch.Tensor) -> BatchScores:
        aggregate = AGGREGATIONS[self.config.aggregation]

        map_a = aggregate(clip_feats, self.mask)                     # (B, N, N, d)
        map_a = self.agnostic_convnet(map_a, self.mask)
        agn: AgnosticScores = score_agnostic_map(map_a, query_vecs, self.heads, self.mask)
        p_iou, p_mm, p_a = calibrate_agnostic(agn.s_iou, agn.s_mm, self.config.head.mm_exponent)

        fused = self.fuse_proj(clip_feats * query_vecs.unsqueeze(-2))  # (B, N, d_C)
        map_c = aggregate(fused, self.mask)
        map_c = self.conditioned_convnet(map_c, self.mask)
        s_c, p_c = score_conditioned_map(map_c, self.conditioned_head, self.mask)

        joint = combine_scores(
            torch.ones_like(p_a) if self.config.path == "conditioned_only" else p_a,
            torch.ones_like(p_c) if self.config.path == "agnostic_only" else p_c,
            self.mask,
        )
        return BatchScores(
            agn.s_iou, agn.s_mm, p_iou, p_mm, p_a, s_c, p_c, joint,
            agn.mm_cell_feats, agn.mm_query_feat,
        )

    @torch.no_grad()
    def score_maps(self, video: torch.Tensor, token_embeds: torch.Tensor) -> ScoreMaps:
        """Inference-time per-candidate scores for a single (video, query) pair."""
        was_training = self.training
        self.eval()
        try:
            out = self.forward([video], [token_embeds])
        finally:
            self.train(was_training)

        def row(t: torch.Tensor) -> np.ndarray:
            return t[0].detach().cpu().numpy().astype(np.float64)

        # products recomputed at float64 so the exported maps satisfy
        # p_a = p_mm * p_iou and joint = p_a * p_c exactly
        p_iou, p_mm, p_c = row(out.p_iou), row(out.p_mm), row(out.p_c)
        p_a = p_mm * p_iou
        if self.config.path == "conditioned_only":
            joint = p_c.copy()
        elif self.config.path == "agnostic_only":
            joint = p_a.copy()
        else:
            joint = p_a * p_c
        return ScoreMaps(
            mask=self.mask,
            s_iou=row(out.s_iou), s_mm=row(out.s_mm),
            p_iou=p_iou, p_mm=p_mm, p_a=p_a,
            s_c=row(out.s_c), p_c=p_c, joint=joint,
            path=self.config.path,
        )
