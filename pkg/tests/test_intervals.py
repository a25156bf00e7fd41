import numpy as np
import pytest

from dualmap.intervals import (
    CandidateCell,
    ClipGrid,
    TimeInterval,
    cell_from_interval,
    interval_from_cell,
    temporal_iou,
)


def measure_iou(x, y, resolution=1e-4):
    """Set-measure oracle: IoU from indicator functions on a fine grid."""
    lo = min(x.start, y.start)
    hi = max(x.end, y.end)
    ts = np.arange(lo, hi, resolution)
    in_x = (ts >= x.start) & (ts < x.end)
    in_y = (ts >= y.start) & (ts < y.end)
    return (in_x & in_y).sum() / (in_x | in_y).sum()


class TestTemporalIou:
    def test_identity(self):
        assert temporal_iou(TimeInterval(2, 6), TimeInterval(2, 6)) == 1.0

    def test_disjoint(self):
        assert temporal_iou(TimeInterval(0, 1), TimeInterval(3, 4)) == 0.0

    def test_partial_overlap_matches_measure_oracle(self):
        x, y = TimeInterval(0, 4), TimeInterval(2, 6)
        iou = temporal_iou(x, y)
        assert iou == pytest.approx(1 / 3, abs=1e-12)  # intersection 2 / union 6
        assert iou == pytest.approx(measure_iou(x, y), abs=1e-3)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a, b, c, d = rng.uniform(0, 10, size=4)
            x = TimeInterval(min(a, b), max(a, b) + 0.1)
            y = TimeInterval(min(c, d), max(c, d) + 0.1)
            assert temporal_iou(x, y) == temporal_iou(y, x)

    def test_monotone_under_translation(self):
        base = TimeInterval(5, 8)
        previous = 1.0
        for shift in np.linspace(0, 10, 50):
            iou = temporal_iou(base, TimeInterval(5 + shift, 8 + shift))
            assert iou <= previous + 1e-12
            previous = iou

    def test_equals_one_only_for_equal_intervals(self):
        assert temporal_iou(TimeInterval(1, 3), TimeInterval(1, 3.0001)) < 1.0

    def test_degenerate_pair_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            temporal_iou(TimeInterval(2, 2), TimeInterval(2, 2))
        with pytest.raises(ValueError, match="degenerate"):
            temporal_iou(TimeInterval(1, 1), TimeInterval(3, 3))

    def test_zero_length_against_proper_interval_is_zero(self):
        assert temporal_iou(TimeInterval(2, 2), TimeInterval(0, 4)) == 0.0


class TestIntervalValidation:
    def test_reversed_rejected(self):
        with pytest.raises(ValueError):
            TimeInterval(5, 3)

    def test_negative_start_rejected(self):
        with pytest.raises(ValueError):
            TimeInterval(-1, 3)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            TimeInterval(0, float("inf"))

    def test_bad_grid_rejected(self):
        with pytest.raises(ValueError):
            ClipGrid(4, 8, 0.0)
        with pytest.raises(ValueError):
            ClipGrid(0, 8, 10.0)

    def test_bad_cell_rejected(self):
        with pytest.raises(ValueError):
            CandidateCell(3, 2)


class TestIntervalFromCell:
    def test_full_span(self):
        grid = ClipGrid(16, 8, 40.0)
        iv = interval_from_cell(CandidateCell(0, 7), grid)
        assert (iv.start, iv.end) == (0.0, 40.0)

    def test_single_clip_convention(self):
        # clip duration 5s: cell (2, 2) covers [10, 15]
        grid = ClipGrid(8, 8, 40.0)
        iv = interval_from_cell(CandidateCell(2, 2), grid)
        assert (iv.start, iv.end) == (10.0, 15.0)

    def test_multi_clip_convention(self):
        grid = ClipGrid(8, 8, 16.0)  # clip duration 2s
        iv = interval_from_cell(CandidateCell(1, 3), grid)
        assert (iv.start, iv.end) == (2.0, 8.0)

    def test_out_of_range_cell(self):
        grid = ClipGrid(8, 8, 16.0)
        with pytest.raises(IndexError):
            interval_from_cell(CandidateCell(0, 8), grid)

    def test_diagonal_cells_cover_video(self):
        grid = ClipGrid(8, 8, 21.0)
        edges = [interval_from_cell(CandidateCell(i, i), grid) for i in range(8)]
        assert edges[0].start == 0.0
        assert edges[-1].end == 21.0
        for left, right in zip(edges, edges[1:]):
            assert left.end == pytest.approx(right.start)


class TestCellFromInterval:
    def test_round_trip_for_aligned_intervals(self):
        grid = ClipGrid(8, 8, 16.0)
        for a in range(8):
            for b in range(a, 8):
                cell = CandidateCell(a, b)
                assert cell_from_interval(interval_from_cell(cell, grid), grid) == cell

    def test_full_span(self):
        grid = ClipGrid(12, 6, 33.0)
        assert cell_from_interval(TimeInterval(0, 33.0), grid) == CandidateCell(0, 5)

    def test_misaligned_interval_matches_bruteforce_oracle(self):
        grid = ClipGrid(8, 8, 16.0)
        rng = np.random.default_rng(7)
        for _ in range(25):
            start = rng.uniform(0, 14)
            iv = TimeInterval(start, min(16.0, start + rng.uniform(0.3, 8)))
            best, best_iou = None, -1.0
            for a in range(8):
                for b in range(a, 8):  # 36 cells
                    seg = TimeInterval(a * 2.0, (b + 1) * 2.0)
                    inter = max(0.0, min(seg.end, iv.end) - max(seg.start, iv.start))
                    iou = inter / (seg.length + iv.length - inter)
                    if iou > best_iou:
                        best, best_iou = (a, b), iou
            cell = cell_from_interval(iv, grid)
            assert (cell.a, cell.b) == best

    def test_out_of_video_interval_rejected(self):
        grid = ClipGrid(8, 8, 16.0)
        with pytest.raises(ValueError):
            cell_from_interval(TimeInterval(0, 17.0), grid)

    def test_zero_length_interval_rejected(self):
        grid = ClipGrid(8, 8, 16.0)
        with pytest.raises(ValueError):
            cell_from_interval(TimeInterval(3.0, 3.0), grid)
