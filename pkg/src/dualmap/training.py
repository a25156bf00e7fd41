"""Training loop: Adam over the dual-path loss with a per-step loss trace."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint, save_checkpoint
from .encoders import HashedVocab
from .featfile import read_features
from .intervals import ClipGrid
from .losses import (
    CellTargets,
    LossConfig,
    PairExample,
    TrainingBatch,
    compute_cell_targets,
    iou_bce_loss,
    mutual_matching_loss,
    total_loss,
)
from .manifest import Manifest
from .network import GroundingNetwork, ModelConfig, desk_config


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=desk_config)
    loss: LossConfig = field(default_factory=LossConfig)
    learning_rate: float = 1e-4
    batch_size: int = 8
    epochs: int = 5
    seed: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    nms_threshold: float = 0.4

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (mutual matching needs inter negatives)")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 <= self.nms_threshold <= 1:
            raise ValueError(f"nms_threshold must be in [0, 1], got {self.nms_threshold}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        model = ModelConfig.from_dict(doc.pop("model"))
        loss = LossConfig(**doc.pop("loss"))
        if "adam_betas" in doc:
            doc["adam_betas"] = tuple(doc["adam_betas"])
        return cls(model=model, loss=loss, **doc)


class FeatureStore:
    """Loads each video's raw feature matrix once."""

    def __init__(self, manifest: Manifest):
        self.manifest = manifest
        self._cache: dict[str, np.ndarray] = {}

    def get(self, video_id: str) -> np.ndarray:
        feats = self._cache.get(video_id)
        if feats is None:
            feats = read_features(self.manifest.feature_file(video_id))
            self._cache[video_id] = feats
        return feats


@dataclass
class _PairData:
    """Precomputed per-query constants: token embeddings and cell targets."""

    video_id: str
    query_id: str
    tokens: torch.Tensor
    targets: CellTargets


def _prepare_pairs(
    manifest: Manifest, model: GroundingNetwork, loss_cfg: LossConfig, vocab: HashedVocab
) -> list[_PairData]:
    pairs = []
    n = model.config.n_clips
    for q in manifest.queries:
        video = manifest.video(q.video_id)
        grid = ClipGrid(video.raw_clip_count, n, video.duration_s)
        targets = compute_cell_targets(grid, model.mask, q.gt_interval, loss_cfg)
        tokens = torch.from_numpy(vocab.embed_sentence(q.sentence))
        pairs.append(_PairData(q.video_id, q.query_id, tokens, targets))
    return pairs


def _batch_losses(model: GroundingNetwork, store: FeatureStore, batch: list[_PairData], cfg: TrainConfig):
    videos = [torch.from_numpy(store.get(p.video_id)) for p in batch]
    tokens = [p.tokens for p in batch]
    out = model(videos, tokens)

    y = torch.stack([torch.from_numpy(p.targets.scaled) for p in batch]).to(out.p_iou.dtype)
    loss_iou = iou_bce_loss(out.p_iou, y)
    loss_cond = iou_bce_loss(out.p_c, y)

    if cfg.loss.mm_weight > 0:
        examples = [
            PairExample(
                video_id=p.video_id,
                query_id=p.query_id,
                targets=y[i],
                overlaps=torch.from_numpy(batch[i].targets.overlaps).to(y.dtype),
                mm_cell_feats=out.mm_cell_feats[i],
                mm_query_feat=out.mm_query_feat[i],
                gt_index=p.targets.gt_index,
            )
            for i, p in enumerate(batch)
        ]
        loss_mm = mutual_matching_loss(TrainingBatch(examples), cfg.loss)
    else:
        loss_mm = out.p_iou.new_zeros(())

    return loss_iou, loss_mm, loss_cond


def _check_finite(step: int, **terms):
    for name, value in terms.items():
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite {name} loss ({value}) at step {step}")


def train(
    manifest: Manifest,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    vocab: HashedVocab | None = None,
    log_every: int = 0,
) -> Checkpoint:
    """Train a fresh network on all (video, query) pairs of the manifest.

    Deterministic for a fixed seed on one machine: the loss trace and the
    resulting parameters are reproducible bit for bit.
    """
    torch.manual_seed(config.seed)
    model = GroundingNetwork(config.model)
    model.train()
    vocab = vocab or HashedVocab(config.model.encoder.token_dim)
    store = FeatureStore(manifest)
    pairs = _prepare_pairs(manifest, model, config.loss, vocab)
    if len(pairs) < 2:
        raise ValueError("training needs at least two (video, query) pairs")

    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=config.adam_betas, eps=config.adam_eps
    )
    order_rng = np.random.default_rng(config.seed)

    trace: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(pairs))
        for lo in range(0, len(order), config.batch_size):
            batch = [pairs[i] for i in order[lo : lo + config.batch_size]]
            if len(batch) < 2:
                continue  # a singleton batch has no inter-video negatives
            optimizer.zero_grad()
            loss_iou, loss_mm, loss_cond = _batch_losses(model, store, batch, config)
            loss = total_loss(loss_iou, loss_mm, loss_cond, config.loss.mm_weight)
            loss.backward()
            optimizer.step()
            step += 1
            record = {
                "step": step,
                "epoch": epoch,
                "total": float(loss.detach()),
                "iou": float(loss_iou.detach()),
                "mm": float(loss_mm.detach()),
                "conditioned": float(loss_cond.detach()),
            }
            _check_finite(step, total=record["total"], iou=record["iou"],
                          mm=record["mm"], conditioned=record["conditioned"])
            trace.append(record)
            if log_every and step % log_every == 0:
                print(f"step {step}: total={record['total']:.4f} iou={record['iou']:.4f} "
                      f"mm={record['mm']:.4f} cond={record['conditioned']:.4f}")

    model.eval()
    if out_dir is not None:
        save_checkpoint(out_dir, model, config.to_dict(), trace)
    return Checkpoint(model, config.to_dict(), trace)
