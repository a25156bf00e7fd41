import math

import numpy as np
import pytest
import torch

from dualmap.intervals import CandidateCell, ClipGrid, TimeInterval, interval_from_cell, temporal_iou
from dualmap.losses import (
    LossConfig,
    PairExample,
    TrainingBatch,
    compute_cell_targets,
    iou_bce_loss,
    mutual_matching_loss,
    scale_iou,
    total_loss,
)
from dualmap.maps import build_validity_mask

CFG = LossConfig()


def make_pair(video_id, query_id, cell_feats, query_feat, overlaps, gt_index=None):
    overlaps = torch.as_tensor(overlaps, dtype=torch.float64)
    if gt_index is None:
        gt_index = int(overlaps.argmax())
    return PairExample(
        video_id=video_id,
        query_id=query_id,
        targets=torch.as_tensor(scale_iou(overlaps, CFG.t_min, CFG.t_max)),
        overlaps=overlaps,
        mm_cell_feats=torch.as_tensor(cell_feats, dtype=torch.float64),
        mm_query_feat=torch.as_tensor(query_feat, dtype=torch.float64),
        gt_index=gt_index,
    )


class TestScaleIou:
    def test_reference_points(self):
        assert scale_iou(0.2, 0.3, 0.7) == 0.0
        assert scale_iou(0.5, 0.3, 0.7) == pytest.approx(0.5)
        assert scale_iou(0.9, 0.3, 0.7) == 1.0

    def test_threshold_points(self):
        assert scale_iou(0.3, 0.3, 0.7) == 0.0
        assert scale_iou(0.7, 0.3, 0.7) == 1.0

    def test_non_decreasing_and_continuous(self):
        xs = np.linspace(0, 1, 401)
        ys = scale_iou(xs, 0.3, 0.7)
        assert (np.diff(ys) >= 0).all()
        assert np.abs(np.diff(ys)).max() < 0.02  # no jumps on a fine grid

    def test_idempotent_on_extremes(self):
        for v in (0.0, 1.0):
            assert scale_iou(scale_iou(v, 0.3, 0.7), 0.3, 0.7) == v

    def test_torch_matches_numpy(self):
        xs = torch.linspace(0, 1, 50, dtype=torch.float64)
        np.testing.assert_allclose(
            scale_iou(xs, 0.3, 0.7).numpy(), scale_iou(xs.numpy(), 0.3, 0.7), atol=1e-15
        )

    def test_bad_thresholds(self):
        with pytest.raises(ValueError):
            scale_iou(0.5, 0.7, 0.3)
        with pytest.raises(ValueError):
            LossConfig(t_min=0.7, t_max=0.3)


class TestIouBce:
    def test_perfect_prediction_limit(self):
        eps = 1e-7
        p = torch.tensor([eps, 1 - eps], dtype=torch.float64)
        y = torch.tensor([0.0, 1.0], dtype=torch.float64)
        assert iou_bce_loss(p, y).item() < 1e-6

    def test_uninformative_prediction_is_ln2(self):
        p = torch.full((5,), 0.5, dtype=torch.float64)
        y = torch.ones(5, dtype=torch.float64)
        assert iou_bce_loss(p, y).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            iou_bce_loss(torch.full((3,), 0.5), torch.ones(4))

    def test_domain_violation(self):
        with pytest.raises(ValueError):
            iou_bce_loss(torch.tensor([0.0, 0.5]), torch.ones(2))
        with pytest.raises(ValueError):
            iou_bce_loss(torch.tensor([1.0, 0.5]), torch.ones(2))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        p0 = rng.uniform(0.05, 0.95, 5)
        y = torch.tensor(rng.uniform(0, 1, 5), dtype=torch.float64)
        p = torch.tensor(p0, dtype=torch.float64, requires_grad=True)
        iou_bce_loss(p, y).backward()
        h = 1e-7
        for i in range(5):
            up = iou_bce_loss(torch.tensor(p0 + h * np.eye(5)[i]), y).item()
            down = iou_bce_loss(torch.tensor(p0 - h * np.eye(5)[i]), y).item()
            fd = (up - down) / (2 * h)
            assert abs(fd - p.grad[i].item()) <= 1e-5 * max(1.0, abs(fd))

    def test_convex_in_each_prediction(self):
        y = torch.tensor([0.3], dtype=torch.float64)
        losses = [iou_bce_loss(torch.tensor([v], dtype=torch.float64), y).item()
                  for v in np.linspace(0.05, 0.95, 31)]
        second_diff = np.diff(losses, 2)
        assert (second_diff > 0).all()


class TestMutualMatching:
    def test_zero_negatives_gives_zero(self):
        u = np.array([1.0, 0.0, 0.0])
        pair = make_pair("v0", "q0", np.tile(u, (4, 1)), u, overlaps=[0.9, 0.8, 0.7, 0.9])
        cfg = LossConfig(margin=0.0, tau_v=1.0, tau_s=1.0)
        assert mutual_matching_loss(TrainingBatch([pair]), cfg).item() == 0.0

    def test_equal_logit_negative_gives_ln2_per_direction(self):
        u = np.array([0.0, 1.0])
        pairs = [
            make_pair("v0", "q0", np.tile(u, (3, 1)), u, overlaps=[0.9, 0.9, 0.9]),
            make_pair("v1", "q1", np.tile(u, (3, 1)), u, overlaps=[0.9, 0.9, 0.9]),
        ]
        cfg = LossConfig(margin=0.0, tau_v=1.0, tau_s=1.0)
        # both directions contribute ln 2 for each pair
        expected = 2 * math.log(2)
        assert mutual_matching_loss(TrainingBatch(pairs), cfg).item() == pytest.approx(expected, abs=1e-12)

    def test_sentence_direction_isolated(self):
        # same video: no inter-video moments; high overlaps: no intra cells
        u = np.array([0.0, 1.0])
        pairs = [
            make_pair("v0", "q0", np.tile(u, (3, 1)), u, overlaps=[0.9, 0.9, 0.9]),
            make_pair("v0", "q1", np.tile(u, (3, 1)), u, overlaps=[0.9, 0.9, 0.9]),
        ]
        cfg = LossConfig(margin=0.0, tau_v=1.0, tau_s=1.0)
        assert mutual_matching_loss(TrainingBatch(pairs), cfg).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_matches_handrolled_softmax_oracle(self):
        rng = np.random.default_rng(4)
        feats = rng.standard_normal((3, 4))
        queries = rng.standard_normal((3, 4))
        pairs = [
            make_pair("v0", f"q{i}", feats[i : i + 1], queries[i], overlaps=[0.9])
            for i in range(3)
        ]
        cfg = LossConfig(margin=0.0, tau_v=0.5, tau_s=0.5)
        # one-sided: same video everywhere, so only the sentence direction has a pool
        unit = lambda x: x / np.linalg.norm(x)
        moments = np.stack([unit(feats[i]) for i in range(3)])
        sents = np.stack([unit(queries[i]) for i in range(3)])
        expected = 0.0
        for i in range(3):
            pos = moments[i] @ sents[i]
            negs = [moments[i] @ sents[j] for j in range(3) if j != i]
            logits = np.array([pos] + negs) / 0.5
            logits -= logits.max()
            expected += -np.log(np.exp(logits[0]) / np.exp(logits).sum())
        expected /= 3
        got = mutual_matching_loss(TrainingBatch(pairs), cfg).item()
        assert got == pytest.approx(expected, abs=1e-10)

    def test_intra_video_negatives_enter_moment_pool(self):
        u = np.array([0.0, 1.0])
        v = np.array([1.0, 0.0])
        # second cell overlaps 0.1 < bound, becomes an intra negative
        cells = np.stack([u, v])
        pair_a = make_pair("v0", "q0", cells, u, overlaps=[0.9, 0.1])
        pair_b = make_pair("v1", "q1", np.tile(u, (2, 1)), u, overlaps=[0.9, 0.9])
        cfg = LossConfig(margin=0.0, tau_v=1.0, tau_s=1.0, neg_iou_bound=0.5)
        with_intra = mutual_matching_loss(TrainingBatch([pair_a, pair_b]), cfg).item()
        pair_a_no_intra = make_pair("v0", "q0", cells, u, overlaps=[0.9, 0.9])
        without = mutual_matching_loss(TrainingBatch([pair_a_no_intra, pair_b]), cfg).item()
        assert with_intra > without  # an extra negative increases the loss

    def test_intra_cap_lowest_overlap_first(self):
        rng = np.random.default_rng(0)
        cells = rng.standard_normal((6, 3))
        overlaps = [0.45, 0.05, 0.25, 0.9, 0.15, 0.35]
        pair = make_pair("v0", "q0", cells, rng.standard_normal(3), overlaps=overlaps)
        cfg = LossConfig(margin=0.0, tau_v=1.0, tau_s=1.0, intra_negatives_cap=2)
        capped = mutual_matching_loss(TrainingBatch([pair]), cfg).item()
        # only the two lowest-overlap cells (indices 1 and 4) should be in the pool
        manual_pair = make_pair("v0", "q0", cells[[1, 4, 3]], pair.mm_query_feat.numpy(),
                                overlaps=[0.05, 0.15, 0.9])
        manual = mutual_matching_loss(TrainingBatch([manual_pair]), cfg).item()
        assert capped == pytest.approx(manual, abs=1e-12)

    def test_increasing_positive_similarity_decreases_loss(self):
        neg = np.array([1.0, 0.0, 0.0])
        query = np.array([0.0, 1.0, 0.0])
        cfg = LossConfig(margin=0.0, tau_v=1.0, tau_s=1.0)
        losses = []
        for align in (0.2, 0.5, 0.9):
            pos = align * query + (1 - align) * neg
            pairs = [
                make_pair("v0", "q0", np.stack([pos]), query, overlaps=[0.9]),
                make_pair("v1", "q1", np.stack([neg]), neg, overlaps=[0.9]),
            ]
            losses.append(mutual_matching_loss(TrainingBatch(pairs), cfg).item())
        assert losses[0] > losses[1] > losses[2]

    def test_margin_raises_loss_with_negatives_present(self):
        rng = np.random.default_rng(1)
        pairs = [
            make_pair(f"v{i}", f"q{i}", rng.standard_normal((3, 4)), rng.standard_normal(4),
                      overlaps=[0.9, 0.8, 0.9])
            for i in range(2)
        ]
        lo = mutual_matching_loss(TrainingBatch(pairs), LossConfig(margin=0.0, tau_v=1.0, tau_s=1.0))
        hi = mutual_matching_loss(TrainingBatch(pairs), LossConfig(margin=0.3, tau_v=1.0, tau_s=1.0))
        assert hi.item() > lo.item()

    def test_batch_duplication_invariance(self):
        rng = np.random.default_rng(2)
        pairs = [
            make_pair(f"v{i}", f"q{i}", rng.standard_normal((5, 4)), rng.standard_normal(4),
                      overlaps=rng.uniform(0, 1, 5).tolist())
            for i in range(3)
        ]
        cfg = LossConfig()
        single = mutual_matching_loss(TrainingBatch(pairs), cfg).item()
        doubled = mutual_matching_loss(TrainingBatch(pairs + pairs), cfg).item()
        assert doubled == pytest.approx(single, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        q0 = rng.standard_normal(4)
        cells0 = rng.standard_normal((4, 4))
        cfg = LossConfig()

        def build(q_feat):
            pairs = [
                make_pair("v0", "q0", cells0, q_feat, overlaps=[0.9, 0.2, 0.4, 0.6]),
                make_pair("v1", "q1", rng_fixed_cells, rng_fixed_query, overlaps=[0.8, 0.3, 0.1, 0.9]),
            ]
            return TrainingBatch(pairs)

        rng_fixed_cells = rng.standard_normal((4, 4))
        rng_fixed_query = rng.standard_normal(4)

        q = torch.tensor(q0, dtype=torch.float64, requires_grad=True)
        batch = build(q)
        mutual_matching_loss(batch, cfg).backward()
        h = 1e-6
        for i in range(4):
            up = mutual_matching_loss(build(torch.tensor(q0 + h * np.eye(4)[i])), cfg).item()
            down = mutual_matching_loss(build(torch.tensor(q0 - h * np.eye(4)[i])), cfg).item()
            fd = (up - down) / (2 * h)
            assert abs(fd - q.grad[i].item()) <= 1e-5 * max(1.0, abs(fd))

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            TrainingBatch([])


class TestTotalLoss:
    def test_weighted_sum(self):
        val = total_loss(torch.tensor(1.0), torch.tensor(2.0), torch.tensor(0.5), 0.01)
        assert val.item() == pytest.approx(1.52)

    def test_zero_weight_drops_matching_term(self):
        val = total_loss(torch.tensor(1.0), torch.tensor(99.0), torch.tensor(0.5), 0.0)
        assert val.item() == pytest.approx(1.5)


class TestCellTargets:
    def test_overlaps_match_bruteforce(self):
        grid = ClipGrid(8, 8, 16.0)
        mask = build_validity_mask(8, 4)
        gt = TimeInterval(3.0, 9.5)
        targets = compute_cell_targets(grid, mask, gt, CFG)
        for idx, (a, b) in enumerate(mask.cells):
            expected = temporal_iou(interval_from_cell(CandidateCell(a, b), grid), gt)
            assert targets.overlaps[idx] == pytest.approx(expected, abs=1e-12)
            assert targets.scaled[idx] == pytest.approx(scale_iou(expected, CFG.t_min, CFG.t_max), abs=1e-12)

    def test_gt_index_is_max_overlap_cell(self):
        grid = ClipGrid(8, 8, 16.0)
        mask = build_validity_mask(8, 4)
        gt = TimeInterval(4.0, 10.0)  # exactly cells 2..4
        targets = compute_cell_targets(grid, mask, gt, CFG)
        assert tuple(mask.cells[targets.gt_index]) == (2, 4)
        assert targets.overlaps[targets.gt_index] == pytest.approx(1.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LossConfig(tau_v=0.0)
        with pytest.raises(ValueError):
            LossConfig(neg_iou_bound=1.0)
        with pytest.raises(ValueError):
            LossConfig(mm_weight=-0.1)
