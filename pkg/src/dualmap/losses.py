"""Supervision targets and the dual-path training loss.

Total loss = iou_bce(agnostic) + lambda * mutual_matching + iou_bce(conditioned).
Both map branches regress the same piecewise-linearly scaled IoU target; the
matching branch additionally discriminates positive moment-sentence pairs
against inter- and intra-video negatives in a non-parametric softmax with a
margin on the positive logit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .intervals import ClipGrid, TimeInterval
from .maps import ValidityMask

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    t_min: float = 0.3
    t_max: float = 0.7
    mm_weight: float = 0.01        # lambda
    tau_v: float = 0.05            # temperature, sentence-classification direction
    tau_s: float = 0.05            # temperature, moment-classification direction
    margin: float = 0.1            # subtracted from the positive logit
    neg_iou_bound: float = 0.5     # same-video cells below this overlap are negatives
    intra_negatives_cap: int = 32  # per pair, lowest-overlap cells first

    def __post_init__(self):
        if not 0 <= self.t_min < self.t_max <= 1:
            raise ValueError(f"need 0 <= t_min < t_max <= 1, got ({self.t_min}, {self.t_max})")
        if self.mm_weight < 0:
            raise ValueError(f"mm_weight must be >= 0, got {self.mm_weight}")
        if self.tau_v <= 0 or self.tau_s <= 0:
            raise ValueError("temperatures must be positive")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if not 0 < self.neg_iou_bound < 1:
            raise ValueError(f"neg_iou_bound must be in (0, 1), got {self.neg_iou_bound}")
        if self.intra_negatives_cap < 0:
            raise ValueError("intra_negatives_cap must be >= 0")


def scale_iou(overlap, t_min: float, t_max: float):
    """Piecewise-linear remap of raw overlap onto [0, 1]: zero at or below
    t_min, one at or above t_max, linear between. Works on scalars, numpy
    arrays and torch tensors."""
    if not t_min < t_max:
        raise ValueError(f"need t_min < t_max, got ({t_min}, {t_max})")
    if isinstance(overlap, torch.Tensor):
        return torch.clamp((overlap - t_min) / (t_max - t_min), 0.0, 1.0)
    scaled = (np.asarray(overlap, dtype=np.float64) - t_min) / (t_max - t_min)
    clipped = np.clip(scaled, 0.0, 1.0)
    return float(clipped) if np.isscalar(overlap) or np.ndim(overlap) == 0 else clipped


def iou_bce_loss(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over the valid cells only."""
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: p {tuple(p.shape)} vs y {tuple(y.shape)}")
    if ((p <= 0) | (p >= 1)).any():
        raise ValueError("predictions must lie strictly inside (0, 1)")
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


@dataclass(frozen=True)
class CellTargets:
    """Per-valid-cell supervision for one (video, query) pair."""

    overlaps: np.ndarray   # raw IoU o_i vs the ground-truth segment, (M,)
    scaled: np.ndarray     # regression target y_i, (M,)
    gt_index: int          # canonical index of the positive cell


def cell_intervals(grid: ClipGrid, mask: ValidityMask) -> np.ndarray:
    """(M, 2) start/end seconds of every valid cell in canonical order."""
    delta = grid.clip_duration
    cells = mask.cells.astype(np.float64)
    starts = cells[:, 0] * delta
    ends = np.minimum((cells[:, 1] + 1.0) * delta, grid.video_duration)
    return np.stack([starts, ends], axis=1)


def compute_cell_targets(
    grid: ClipGrid, mask: ValidityMask, gt: TimeInterval, cfg: LossConfig
) -> CellTargets:
    """Overlaps and scaled targets for all valid cells; the positive cell is
    the valid cell with maximum overlap (first in canonical order on ties)."""
    spans = cell_intervals(grid, mask)
    inter = np.maximum(0.0, np.minimum(spans[:, 1], gt.end) - np.maximum(spans[:, 0], gt.start))
    union = (spans[:, 1] - spans[:, 0]) + gt.length - inter
    overlaps = inter / union
    scaled = scale_iou(overlaps, cfg.t_min, cfg.t_max)
    return CellTargets(overlaps, scaled, int(np.argmax(overlaps)))


@dataclass
class PairExample:
    """One positive moment-sentence pair inside a training batch."""

    video_id: str
    query_id: str
    targets: torch.Tensor        # y_i over valid cells, (M,)
    overlaps: torch.Tensor       # raw o_i over valid cells, (M,)
    mm_cell_feats: torch.Tensor  # matching-branch cell features, (M, head_dim)
    mm_query_feat: torch.Tensor  # matching-branch sentence feature, (head_dim,)
    gt_index: int


@dataclass
class TrainingBatch:
    pairs: list[PairExample]

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("a training batch needs at least one positive pair")


def _unit(x: torch.Tensor) -> torch.Tensor:
    return x / x.norm(dim=-1, keepdim=True)


def _direction_nll(pos_logit: torch.Tensor, neg_logits: torch.Tensor, margin: float, tau: float):
    """-log softmax probability of the margin-shifted positive against the pool.

    With an empty pool the softmax is over the positive alone and the
    contribution is exactly zero.
    """
    if neg_logits.numel() == 0:
        logger.debug("degenerate batch: empty negative pool, direction contributes 0")
        return pos_logit.new_zeros(())
    logits = torch.cat([(pos_logit.reshape(1) - margin), neg_logits]) / tau
    return -torch.log_softmax(logits, dim=0)[0]


def _first_per_key(pairs, key, skip) -> list[int]:
    seen = set()
    rows = []
    for j, other in enumerate(pairs):
        k = key(other)
        if k == skip or k in seen:
            continue
        seen.add(k)
        rows.append(j)
    return rows


def mutual_matching_loss(batch: TrainingBatch, cfg: LossConfig) -> torch.Tensor:
    """Bidirectional pair discrimination, mean-normalized per positive pair.

    For each positive (moment_i, sentence_i): the sentence direction
    discriminates sentence_i against every other distinct sentence in the
    batch; the moment direction discriminates moment_i against the positive
    moments of other videos in the batch plus the same pair's low-overlap
    cells (capped, lowest overlap first). Pools are deduplicated by identity
    (query id, or video id + cell), which makes the loss invariant to
    duplicating the batch. Logits are cosine similarities of the
    matching-branch features.
    """
    pairs = batch.pairs
    pos_moments = torch.stack([_unit(p.mm_cell_feats[p.gt_index]) for p in pairs])
    pos_queries = torch.stack([_unit(p.mm_query_feat) for p in pairs])

    total = pos_moments.new_zeros(())
    for i, pair in enumerate(pairs):
        pos_logit = pos_moments[i] @ pos_queries[i]

        # sentence direction: which sentence matches this moment
        sent_rows = _first_per_key(pairs, lambda p: p.query_id, pair.query_id)
        sent_negs = (
            pos_queries[sent_rows] @ pos_moments[i]
            if sent_rows
            else pos_moments.new_zeros(0)
        )
        total = total + _direction_nll(pos_logit, sent_negs, cfg.margin, cfg.tau_v)

        # moment direction: which moment matches this sentence; inter-video
        # moments are keyed by (video, cell) so distinct moments of one video
        # all participate while exact duplicates collapse
        moment_rows = [
            j
            for j in _first_per_key(pairs, lambda p: (p.video_id, p.gt_index), None)
            if pairs[j].video_id != pair.video_id
        ]
        neg_feats = [pos_moments[moment_rows]] if moment_rows else []
        intra = _intra_negative_indices(pair, cfg)
        if intra.numel():
            neg_feats.append(_unit(pair.mm_cell_feats[intra]))
        moment_negs = (
            torch.cat(neg_feats) @ pos_queries[i] if neg_feats else pos_queries.new_zeros(0)
        )
        total = total + _direction_nll(pos_logit, moment_negs, cfg.margin, cfg.tau_s)

    return total / len(pairs)


def _intra_negative_indices(pair: PairExample, cfg: LossConfig) -> torch.Tensor:
    eligible = torch.nonzero(pair.overlaps < cfg.neg_iou_bound, as_tuple=False).flatten()
    if eligible.numel() == 0 or cfg.intra_negatives_cap == 0:
        return eligible[:0]
    order = torch.argsort(pair.overlaps[eligible], stable=True)
    return eligible[order[: cfg.intra_negatives_cap]]


def total_loss(iou_agnostic: torch.Tensor, mm: torch.Tensor, iou_conditioned: torch.Tensor, mm_weight: float):
    """Dual-path objective: IoU regression on both maps plus the weighted
    matching term."""
    return iou_agnostic + mm_weight * mm + iou_conditioned
