"""Calibrated per-candidate scores and ranked prediction.

The map built from video features alone is scored against the query by cosine
similarity through two independent branches (IoU regression and cross-modal
matching); the query-fused map is reduced to one channel per cell. Raw scores
are amplified by a factor of 10 before the logistic so calibrated values
occupy most of (0, 1), and the matching score is remapped from (-1, 1) with an
exponent that reshapes its distribution. The joint score of a candidate is the
product of the two map scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .intervals import TimeInterval, temporal_iou
from .maps import ValidityMask

AMPLIFICATION = 10.0


class DegenerateProjectionError(RuntimeError):
    """A projected vector has zero norm, so its cosine score is undefined."""


@dataclass(frozen=True)
class HeadConfig:
    head_dim: int = 64       # shared projection dimension of the two agnostic branches
    mm_exponent: float = 0.3  # u, power applied to the remapped matching score

    def __post_init__(self):
        if self.head_dim < 1:
            raise ValueError(f"head_dim must be >= 1, got {self.head_dim}")
        if not 0 < self.mm_exponent <= 1:
            raise ValueError(f"mm_exponent must be in (0, 1], got {self.mm_exponent}")


class AgnosticHeads(nn.Module):
    """Two independent branch projections to the shared head dimension:
    linear layers for the query vector, 1x1 convolutions for the map."""

    def __init__(self, hidden_dim: int, head_dim: int):
        super().__init__()
        self.query_iou = nn.Linear(hidden_dim, head_dim)
        self.query_mm = nn.Linear(hidden_dim, head_dim)
        self.map_iou = nn.Conv2d(hidden_dim, head_dim, kernel_size=1)
        self.map_mm = nn.Conv2d(hidden_dim, head_dim, kernel_size=1)


def _project_map(conv: nn.Conv2d, map2d: torch.Tensor) -> torch.Tensor:
    squeeze = map2d.ndim == 3
    x = map2d.unsqueeze(0) if squeeze else map2d
    x = conv(x.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
    return x.squeeze(0) if squeeze else x


def gather_cells(map2d: torch.Tensor, mask: ValidityMask) -> torch.Tensor:
    """Extract valid-cell feature rows (..., M, C) in canonical cell order."""
    cells = mask.cells
    return map2d[..., cells[:, 0], cells[:, 1], :]


def _normalize(x: torch.Tensor, what: str) -> torch.Tensor:
    norm = x.norm(dim=-1, keepdim=True)
    if (norm == 0).any():
        raise DegenerateProjectionError(f"zero-norm {what} vector; projection parameters are degenerate")
    return x / norm


@dataclass
class AgnosticScores:
    """Raw cosine scores per valid cell plus the matching-branch features the
    mutual-matching loss consumes."""

    s_iou: torch.Tensor   # (..., M) in [-1, 1]
    s_mm: torch.Tensor    # (..., M) in [-1, 1]
    mm_cell_feats: torch.Tensor   # (..., M, head_dim), unnormalized
    mm_query_feat: torch.Tensor   # (..., head_dim), unnormalized


def score_agnostic_map(
    map_conv: torch.Tensor,
    query_vec: torch.Tensor,
    heads: AgnosticHeads,
    mask: ValidityMask,
) -> AgnosticScores:
    """Per-cell cosine similarity between the projected cell feature and the
    projected query vector, separately for the two branches.

    Accepts a single map (N, N, d) with query (d,) or batched (B, N, N, d)
    with (B, d).
    """
    cell_iou = gather_cells(_project_map(heads.map_iou, map_conv), mask)
    cell_mm = gather_cells(_project_map(heads.map_mm, map_conv), mask)
    q_iou = heads.query_iou(query_vec)
    q_mm = heads.query_mm(query_vec)
    s_iou = (_normalize(cell_iou, "cell") * _normalize(q_iou, "query").unsqueeze(-2)).sum(-1)
    s_mm = (_normalize(cell_mm, "cell") * _normalize(q_mm, "query").unsqueeze(-2)).sum(-1)
    return AgnosticScores(s_iou, s_mm, cell_mm, q_mm)


def calibrate_agnostic(s_iou, s_mm, mm_exponent: float):
    """Map raw cosine scores onto (0, 1): logistic with 10x amplification for
    the regression branch, linear remap plus exponent for the matching branch.
    Returns (p_iou, p_mm, p_a) with p_a = p_mm * p_iou.
    """
    s_iou, s_mm = torch.as_tensor(s_iou), torch.as_tensor(s_mm)
    p_iou = torch.sigmoid(AMPLIFICATION * s_iou)
    p_mm = (0.5 * s_mm + 0.5) ** mm_exponent
    return p_iou, p_mm, p_mm * p_iou


def score_conditioned_map(
    map_conv: torch.Tensor, head: nn.Linear, mask: ValidityMask
) -> tuple[torch.Tensor, torch.Tensor]:
    """Reduce each valid cell of the fused map to one channel, then a logistic
    of the amplified raw score. Returns (s_c, p_c)."""
    cells = gather_cells(map_conv, mask)
    s_c = head(cells).squeeze(-1)
    return s_c, torch.sigmoid(AMPLIFICATION * s_c)


def combine_scores(p_a: torch.Tensor, p_c: torch.Tensor, mask: ValidityMask) -> torch.Tensor:
    """Joint per-candidate score: element-wise product over the valid cells."""
    if p_a.shape != p_c.shape or p_a.shape[-1] != mask.count:
        raise ValueError(
            f"score shapes {tuple(p_a.shape)} / {tuple(p_c.shape)} do not match mask count {mask.count}"
        )
    return p_a * p_c


@dataclass(frozen=True)
class ScoreMaps:
    """All per-candidate scores of one query, in canonical valid-cell order."""

    mask: ValidityMask
    s_iou: np.ndarray
    s_mm: np.ndarray
    p_iou: np.ndarray
    p_mm: np.ndarray
    p_a: np.ndarray
    s_c: np.ndarray
    p_c: np.ndarray
    joint: np.ndarray
    path: str = "dual"

    def grid(self, name: str, fill: float = np.nan) -> np.ndarray:
        """Scatter a per-cell score vector onto the N x N grid; invalid cells
        carry ``fill``."""
        values = getattr(self, name)
        out = np.full((self.mask.n, self.mask.n), fill, dtype=np.float64)
        cells = self.mask.cells
        out[cells[:, 0], cells[:, 1]] = values
        return out


def nms_select(
    candidates: list[tuple[TimeInterval, float]], threshold: float
) -> list[tuple[TimeInterval, float]]:
    """Greedy non-maximum suppression by descending score.

    A candidate is suppressed when its IoU with any kept candidate exceeds the
    threshold. Ties break by earlier start time, then shorter duration, so the
    result is deterministic.
    """
    ordered = sorted(candidates, key=lambda c: (-c[1], c[0].start, c[0].length))
    kept: list[tuple[TimeInterval, float]] = []
    for interval, score in ordered:
        if any(temporal_iou(interval, k) > threshold for k, _ in kept):
            continue
        kept.append((interval, score))
    return kept
