"""Interval arithmetic and the clip-grid coordinate system.

A video is discretized into ``sampled_clip_count`` clips of equal duration.
A candidate moment is a cell ``(a, b)`` on the 2D temporal map: it covers
clips ``a`` through ``b`` inclusive, i.e. the real-time segment
``[a * clip_duration, (b + 1) * clip_duration]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class TimeInterval:
    """A real-time segment ``[start, end]`` in seconds."""

    start: float
    end: float

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValueError(f"interval bounds must be finite, got [{self.start}, {self.end}]")
        if self.start < 0:
            raise ValueError(f"interval start must be >= 0, got {self.start}")
        if self.end < self.start:
            raise ValueError(f"interval end ({self.end}) precedes start ({self.start})")

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class ClipGrid:
    """Discretization of one video into equal-duration sampled clips.

    ``raw_clip_count`` is the clip count of the stored feature sequence (before
    fixed-length sampling); ``sampled_clip_count`` is the resolution of the
    temporal map. All map coordinates refer to the sampled grid.
    """

    raw_clip_count: int
    sampled_clip_count: int
    video_duration: float

    def __post_init__(self):
        if self.raw_clip_count < 1:
            raise ValueError(f"raw_clip_count must be >= 1, got {self.raw_clip_count}")
        if self.sampled_clip_count < 1:
            raise ValueError(f"sampled_clip_count must be >= 1, got {self.sampled_clip_count}")
        if not math.isfinite(self.video_duration) or self.video_duration <= 0:
            raise ValueError(f"video_duration must be positive, got {self.video_duration}")

    @property
    def clip_duration(self) -> float:
        return self.video_duration / self.sampled_clip_count


@dataclass(frozen=True)
class CandidateCell:
    """Map coordinate of a candidate moment: start clip ``a``, end clip ``b`` (inclusive)."""

    a: int
    b: int

    def __post_init__(self):
        if self.a < 0 or self.b < self.a:
            raise ValueError(f"cell requires 0 <= a <= b, got (a={self.a}, b={self.b})")

    @property
    def clip_span(self) -> int:
        return self.b - self.a + 1


def temporal_iou(x: TimeInterval, y: TimeInterval) -> float:
    """Intersection over union of two intervals, in [0, 1].

    Undefined (raises) when the union has zero measure, i.e. both intervals
    are degenerate points.
    """
    intersection = max(0.0, min(x.end, y.end) - max(x.start, y.start))
    union = x.length + y.length - intersection
    if union <= 0.0:
        raise ValueError(f"IoU undefined for degenerate intervals {x} and {y}")
    return intersection / union


def interval_from_cell(cell: CandidateCell, grid: ClipGrid) -> TimeInterval:
    """Real-time segment covered by a map cell; end clipped to the video duration."""
    n = grid.sampled_clip_count
    if cell.b >= n:
        raise IndexError(f"cell {cell} out of range for grid with {n} clips")
    delta = grid.clip_duration
    return TimeInterval(cell.a * delta, min((cell.b + 1) * delta, grid.video_duration))


def cell_from_interval(iv: TimeInterval, grid: ClipGrid, *, tolerance: float = 1e-9) -> CandidateCell:
    """Rasterize an interval onto the grid: the cell whose segment maximizes IoU.

    Ties are broken by smaller start index, then smaller end index, so training
    targets are reproducible.
    """
    if iv.end > grid.video_duration + tolerance:
        raise ValueError(f"interval {iv} exceeds video duration {grid.video_duration}")
    if iv.length <= 0.0:
        raise ValueError(f"cannot rasterize a zero-length interval {iv}")
    n = grid.sampled_clip_count
    best_cell = None
    best_iou = -1.0
    for a in range(n):
        for b in range(a, n):
            cand = CandidateCell(a, b)
            iou = temporal_iou(interval_from_cell(cand, grid), iv)
            if iou > best_iou:
                best_iou = iou
                best_cell = cand
    assert best_cell is not None
    return best_cell
