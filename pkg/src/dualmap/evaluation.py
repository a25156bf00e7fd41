"""Recall evaluation, prediction, and score-map export."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint
from .encoders import HashedVocab
from .intervals import ClipGrid, TimeInterval, temporal_iou
from .losses import cell_intervals
from .manifest import Manifest, PredictionRecord
from .scoring import nms_select
from .training import FeatureStore

DEFAULT_NS = (1, 5)
DEFAULT_THETAS = (0.3, 0.5, 0.7)


@dataclass(frozen=True)
class RankedQuery:
    """Post-NMS ranked candidates of one query, with its ground truth."""

    query_id: str
    gt: TimeInterval
    survivors: tuple[tuple[TimeInterval, float], ...]


@dataclass(frozen=True)
class EvalReport:
    ns: tuple[int, ...]
    thetas: tuple[float, ...]
    recall: dict[tuple[int, float], float]
    top1_iou: tuple[float, ...]
    query_count: int

    def __post_init__(self):
        for value in self.recall.values():
            if not 0 <= value <= 1:
                raise ValueError(f"recall entries must be in [0, 1], got {value}")

    def value(self, n: int, theta: float) -> float:
        return self.recall[(n, theta)]

    def to_dict(self) -> dict:
        return {
            "ns": list(self.ns),
            "thetas": list(self.thetas),
            "recall": {f"R@{n},IoU@{theta:g}": v for (n, theta), v in sorted(self.recall.items())},
            "top1_iou": list(self.top1_iou),
            "query_count": self.query_count,
        }

    def to_text_table(self) -> str:
        header = ["metric"] + [f"IoU@{theta:g}" for theta in self.thetas]
        rows = [header]
        for n in self.ns:
            rows.append([f"R@{n}"] + [f"{self.value(n, theta):.4f}" for theta in self.thetas])
        widths = [max(len(row[c]) for row in rows) for c in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["n,theta,recall"]
        for (n, theta), v in sorted(self.recall.items()):
            lines.append(f"{n},{theta:g},{v}")
        return "\n".join(lines) + "\n"


def recall_table(
    rankings: list[RankedQuery],
    ns: tuple[int, ...] = DEFAULT_NS,
    thetas: tuple[float, ...] = DEFAULT_THETAS,
) -> EvalReport:
    """Fraction of queries whose top-N survivors contain a candidate with
    IoU strictly above theta, for every (N, theta)."""
    if not rankings:
        raise ValueError("cannot evaluate zero queries")
    ious = []
    for ranked in rankings:
        ious.append([temporal_iou(iv, ranked.gt) for iv, _ in ranked.survivors])
    recall = {}
    for n in ns:
        for theta in thetas:
            hits = sum(1 for per_q in ious if any(iou > theta for iou in per_q[:n]))
            recall[(n, theta)] = hits / len(rankings)
    top1 = tuple(per_q[0] if per_q else 0.0 for per_q in ious)
    return EvalReport(tuple(ns), tuple(thetas), recall, top1, len(rankings))


def _candidates_for_query(ckpt: Checkpoint, feats, tokens, grid: ClipGrid):
    maps = ckpt.model.score_maps(feats, tokens)
    spans = cell_intervals(grid, ckpt.model.mask)
    return [
        (TimeInterval(start, end), float(score))
        for (start, end), score in zip(spans, maps.joint)
    ]


def rank_query(
    ckpt: Checkpoint,
    feats: np.ndarray | torch.Tensor,
    sentence: str,
    grid: ClipGrid,
    nms_threshold: float,
    vocab: HashedVocab | None = None,
) -> list[tuple[TimeInterval, float]]:
    """Joint-score all valid candidates of one query and apply NMS."""
    vocab = vocab or HashedVocab(ckpt.config.encoder.token_dim)
    if isinstance(feats, np.ndarray):
        feats = torch.from_numpy(feats)
    tokens = torch.from_numpy(vocab.embed_sentence(sentence))
    return nms_select(_candidates_for_query(ckpt, feats, tokens, grid), nms_threshold)


def evaluate_recall(
    ckpt: Checkpoint,
    manifest: Manifest,
    ns: tuple[int, ...] = DEFAULT_NS,
    thetas: tuple[float, ...] = DEFAULT_THETAS,
    nms_threshold: float | None = None,
    vocab: HashedVocab | None = None,
) -> EvalReport:
    """Rank every manifest query with the checkpointed model and tabulate
    R@N, IoU@theta."""
    if nms_threshold is None:
        nms_threshold = float(ckpt.train_config.get("nms_threshold", 0.4))
    vocab = vocab or HashedVocab(ckpt.config.encoder.token_dim)
    store = FeatureStore(manifest)
    keep = max(ns)
    rankings = []
    for q in manifest.queries:
        video = manifest.video(q.video_id)
        grid = ClipGrid(video.raw_clip_count, ckpt.config.n_clips, video.duration_s)
        survivors = rank_query(ckpt, store.get(q.video_id), q.sentence, grid, nms_threshold, vocab)
        rankings.append(RankedQuery(q.query_id, q.gt_interval, tuple(survivors[:keep])))
    return recall_table(rankings, ns, thetas)


def predict(
    ckpt: Checkpoint,
    feats: np.ndarray | torch.Tensor,
    duration_s: float,
    sentence: str,
    k: int,
    nms_threshold: float | None = None,
    query_id: str = "query",
    vocab: HashedVocab | None = None,
) -> PredictionRecord:
    """Top-k post-NMS intervals with joint scores for an ad-hoc query."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if nms_threshold is None:
        nms_threshold = float(ckpt.train_config.get("nms_threshold", 0.4))
    raw_count = int(feats.shape[0])
    grid = ClipGrid(raw_count, ckpt.config.n_clips, duration_s)
    survivors = rank_query(ckpt, feats, sentence, grid, nms_threshold, vocab)
    return PredictionRecord(query_id, tuple(survivors[:k]))


def export_score_map(
    ckpt: Checkpoint,
    manifest: Manifest,
    query_id: str,
    vocab: HashedVocab | None = None,
) -> dict:
    """All score grids of one query as JSON-ready nested lists; invalid cells
    are null, and the joint grid is the product of the two map grids."""
    q = manifest.query(query_id)
    video = manifest.video(q.video_id)
    vocab = vocab or HashedVocab(ckpt.config.encoder.token_dim)
    feats = torch.from_numpy(FeatureStore(manifest).get(q.video_id))
    tokens = torch.from_numpy(vocab.embed_sentence(q.sentence))
    maps = ckpt.model.score_maps(feats, tokens)

    def grid_list(name: str) -> list[list[float | None]]:
        grid = maps.grid(name)
        return [[None if np.isnan(v) else float(v) for v in row] for row in grid]

    return {
        "query_id": q.query_id,
        "video_id": q.video_id,
        "sentence": q.sentence,
        "gt_interval": [q.gt_interval.start, q.gt_interval.end],
        "n_clips": maps.mask.n,
        "path": maps.path,
        "mask": maps.mask.grid.tolist(),
        "p_a": grid_list("p_a"),
        "p_c": grid_list("p_c"),
        "joint": grid_list("joint"),
    }


def write_predictions(records: list[PredictionRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for record in records:
            fh.write(record.to_json_line() + "\n")
