import numpy as np
import pytest

from hepatex.detection import (
    Box3D,
    CenterSize,
    DetectionCandidate,
    GaussianSpec,
    LossConfig,
    box_to_center_size,
    center_l1_grad,
    center_size_to_box,
    decode_peaks,
    gamma_from_spacing,
    heatmap_focal_loss,
    heatmap_focal_loss_grad,
    iou3d,
    nms_merge,
    offset_loss,
    render_targets,
    sigma_for_size,
    size_loss,
    total_loss,
)
from hepatex.ops import gradcheck


class TestBoxConversions:
    def test_hand_values(self):
        cs = box_to_center_size(Box3D(0, 0, 0, 10, 20, 4))
        np.testing.assert_allclose(cs.p, [5, 10, 2])
        np.testing.assert_allclose(cs.s, [10, 20, 4])

    def test_unit_cube(self):
        cs = box_to_center_size(Box3D(0, 0, 0, 1, 1, 1))
        np.testing.assert_allclose(cs.p, [0.5, 0.5, 0.5])
        np.testing.assert_allclose(cs.s, [1, 1, 1])

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            lo = rng.uniform(0, 10, 3)
            ext = rng.uniform(0.5, 15, 3)
            box = Box3D(lo[0], lo[1], lo[2], lo[0] + ext[0], lo[1] + ext[1], lo[2] + ext[2])
            back = center_size_to_box(box_to_center_size(box))
            np.testing.assert_allclose(back.astuple(), box.astuple(), atol=1e-12)

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            Box3D(0, 0, 0, 0, 1, 1)


class TestRenderTargets:
    def spec(self, gamma=(1, 1, 1), sigma=1.0):
        return GaussianSpec(sigma=sigma, gamma=gamma)

    def test_center_cell_is_exactly_one(self):
        t = render_targets([CenterSize([8, 8, 8], [4, 4, 4])], (4, 4, 4), 4, self.spec())
        assert t.heatmap[2, 2, 2] == 1.0
        assert t.center_mask[2, 2, 2]

    def test_one_cell_offset_value(self):
        # exp(-0.5) at unit offset with unit sigma and gamma
        t = render_targets([CenterSize([8, 8, 8], [4, 4, 4])], (5, 5, 5), 4, self.spec())
        assert t.heatmap[3, 2, 2] == pytest.approx(np.exp(-0.5), abs=1e-9)
        assert t.heatmap[3, 2, 2] == pytest.approx(0.60653, abs=1e-4)

    def test_anisotropy_law(self):
        # gamma (1,1,2): offset (0,0,2) and (1,0,0) give equal values
        t = render_targets([CenterSize([8, 8, 8], [4, 4, 4])], (5, 5, 5), 4,
                           self.spec(gamma=(1, 1, 2)))
        assert t.heatmap[2, 2, 4] == pytest.approx(t.heatmap[3, 2, 2], abs=1e-9)

    def test_heatmap_in_unit_range(self):
        rng = np.random.default_rng(1)
        boxes = [CenterSize(rng.uniform(4, 28, 3), rng.uniform(2, 8, 3)) for _ in range(4)]
        t = render_targets(boxes, (8, 8, 8), 4, self.spec(gamma=(1, 1, 2)))
        assert t.heatmap.min() >= 0.0 and t.heatmap.max() <= 1.0
        for cs in boxes:
            cell = tuple(np.floor(cs.p / 4).astype(int))
            assert t.heatmap[cell] == 1.0

    def test_monotone_decay_along_rays(self):
        t = render_targets([CenterSize([16, 16, 16], [4, 4, 4])], (9, 9, 9), 4,
                           self.spec(gamma=(1, 2, 3), sigma=1.5))
        c = np.array([4, 4, 4])
        for d in [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 1)]:
            ray = []
            pos = c.copy()
            while np.all(pos < 9):
                ray.append(t.heatmap[tuple(pos)])
                pos = pos + d
            assert all(a >= b for a, b in zip(ray, ray[1:]))

    def test_offsets_written_at_center(self):
        t = render_targets([CenterSize([9, 10, 11], [4, 4, 4])], (4, 4, 4), 4, self.spec())
        np.testing.assert_allclose(t.offsets[:, 2, 2, 2], [0.25, 0.5, 0.75])
        np.testing.assert_allclose(t.sizes[:, 2, 2, 2], [4, 4, 4])

    def test_center_outside_grid_rejected(self):
        with pytest.raises(ValueError, match="outside grid"):
            render_targets([CenterSize([40, 8, 8], [4, 4, 4])], (4, 4, 4), 4, self.spec())


class TestLosses:
    def one_center_target(self, shape=(4, 4, 4)):
        return render_targets([CenterSize([9, 9, 9], [4, 4, 4])], shape, 4,
                              GaussianSpec(1.0, (1, 1, 1)))

    def test_near_perfect_prediction(self):
        t = self.one_center_target()
        pred = np.where(t.center_mask, 1.0, 0.0)
        assert heatmap_focal_loss(pred, t) < 1e-4

    def test_hand_value_single_center(self):
        # isolate the center term: 0.5^2 * -log(0.5) = 0.17329 with N=1
        t = self.one_center_target()
        t.heatmap[:] = np.where(t.center_mask, 1.0, 0.0)  # zero soft background
        pred = np.where(t.center_mask, 0.5, 0.0)
        assert heatmap_focal_loss(pred, t) == pytest.approx(0.17329, abs=1e-4)

    def test_background_monotonicity(self):
        t = self.one_center_target()
        lo = np.where(t.center_mask, 0.9, 0.1)
        hi = np.where(t.center_mask, 0.9, 0.2)
        assert heatmap_focal_loss(hi, t) > heatmap_focal_loss(lo, t)

    def test_empty_target_rejected(self):
        t = self.one_center_target()
        t.center_mask[:] = False
        with pytest.raises(ValueError, match="no center cells"):
            heatmap_focal_loss(np.full(t.heatmap.shape, 0.5), t)

    def test_size_loss_zero_when_exact(self):
        t = self.one_center_target()
        assert size_loss(t.sizes.copy(), t) == 0.0

    def test_size_loss_hand_value(self):
        t = self.one_center_target()
        pred = t.sizes.copy()
        pred[:, t.center_mask] += np.array([1.0, 2.0, 3.0])[:, None]
        assert size_loss(pred, t) == pytest.approx(6.0)

    def test_size_loss_averages_over_boxes(self):
        t = render_targets([CenterSize([5, 5, 5], [4, 4, 4]),
                            CenterSize([25, 25, 25], [6, 6, 6])],
                           (8, 8, 8), 4, GaussianSpec(1.0, (1, 1, 1)))
        pred = t.sizes.copy()
        pred[:, 1, 1, 1] += np.array([1.0, 2.0, 3.0])    # L1 = 6
        pred[:, 6, 6, 6] += np.array([2.0, 0.0, 0.0])    # L1 = 2
        assert size_loss(pred, t) == pytest.approx(4.0)

    def test_offset_loss_same_form(self):
        t = self.one_center_target()
        pred = t.offsets.copy()
        pred[:, t.center_mask] += 0.25
        assert offset_loss(pred, t) == pytest.approx(0.75)

    def test_total_loss_arithmetic(self):
        assert total_loss((1.0, 2.0, 3.0)) == pytest.approx(4.2)
        assert total_loss((0.0, 0.0, 0.0)) == 0.0
        assert total_loss((1.0, 5.0, 0.0), LossConfig(lambda_size=0.0)) == 1.0

    def test_focal_grad_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        t = self.one_center_target()
        pred0 = rng.uniform(0.05, 0.95, t.heatmap.shape)

        def fn(theta):
            p = theta.reshape(t.heatmap.shape)
            loss, grad = heatmap_focal_loss_grad(p, t)
            return loss, grad.reshape(-1)

        assert gradcheck(fn, pred0.reshape(-1), h=1e-6).max_rel_error < 1e-5

    def test_center_l1_grad_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        t = self.one_center_target()
        pred0 = t.sizes + rng.uniform(0.1, 2.0, t.sizes.shape)

        def fn(theta):
            p = theta.reshape(t.sizes.shape)
            loss, grad = center_l1_grad(p, t.sizes, t.center_mask)
            return loss, grad.reshape(-1)

        assert gradcheck(fn, pred0.reshape(-1), h=1e-7).max_rel_error < 1e-4


class TestDecodePeaks:
    def test_hand_decode(self):
        heat = np.zeros((8, 8, 4))
        heat[3, 4, 2] = 0.9
        offs = np.zeros((3, 8, 8, 4))
        offs[:, 3, 4, 2] = [0.5, 0.0, 0.0]
        sizes = np.zeros((3, 8, 8, 4))
        sizes[:, 3, 4, 2] = [8, 8, 4]
        cands = decode_peaks(heat, offs, sizes, R=4, topk=3)
        assert len(cands) >= 1
        top = cands[0]
        assert top.score == pytest.approx(0.9)
        np.testing.assert_allclose(top.box.astuple(), (10, 12, 6, 18, 20, 10))

    def test_topk_selects_highest(self):
        heat = np.zeros((8, 8, 8))
        heat[1, 1, 1] = 0.9
        heat[6, 6, 6] = 0.8
        offs = np.zeros((3, 8, 8, 8))
        sizes = np.full((3, 8, 8, 8), 4.0)
        cands = decode_peaks(heat, offs, sizes, R=4, topk=1)
        assert len(cands) == 1
        assert cands[0].score == pytest.approx(0.9)

    def test_render_decode_round_trip(self):
        rng = np.random.default_rng(4)
        R = 4
        shape = (12, 12, 8)
        for trial in range(20):
            boxes = []
            cells = set()
            while len(boxes) < 3:
                p = rng.uniform(8, np.array(shape) * R - 8)
                cell = tuple((p // R).astype(int))
                if any(max(abs(c - o) for c, o in zip(cell, e)) < 3 for e in cells):
                    continue
                cells.add(cell)
                boxes.append(CenterSize(p, rng.uniform(4, 10, 3)))
            t = render_targets(boxes, shape, R, GaussianSpec(1.0, (1, 1, 2)))
            cands = decode_peaks(t.heatmap, t.offsets, t.sizes, R, topk=len(boxes))
            assert len(cands) == len(boxes)
            for cs in boxes:
                best = min(cands, key=lambda c: np.abs(
                    np.array(box_to_center_size(c.box).p) - cs.p).max())
                got = box_to_center_size(best.box)
                assert np.abs(got.p - cs.p).max() <= R
                np.testing.assert_allclose(got.s, cs.s, atol=1e-9)

    def test_tie_break_is_lexicographic(self):
        heat = np.zeros((6, 6, 6))
        heat[4, 1, 1] = 0.5
        heat[1, 4, 4] = 0.5
        offs = np.zeros((3, 6, 6, 6))
        sizes = np.full((3, 6, 6, 6), 2.0)
        cands = decode_peaks(heat, offs, sizes, R=2, topk=2)
        c0 = box_to_center_size(cands[0].box).p
        assert c0[0] == pytest.approx(2.0)  # cell (1,4,4) comes first


class TestIouNms:
    def test_hand_iou(self):
        a = Box3D(0, 0, 0, 2, 2, 2)
        b = Box3D(1, 0, 0, 3, 2, 2)
        assert iou3d(a, b) == pytest.approx(1 / 3)

    def test_disjoint_boxes(self):
        assert iou3d(Box3D(0, 0, 0, 1, 1, 1), Box3D(5, 5, 5, 6, 6, 6)) == 0.0

    def test_identical_boxes_suppressed(self):
        box = Box3D(0, 0, 0, 2, 2, 2)
        cands = [DetectionCandidate(0.9, box, "A"), DetectionCandidate(0.8, box, "V")]
        kept = nms_merge(cands, 0.5)
        assert len(kept) == 1
        assert kept[0].score == 0.9

    def test_disjoint_survive(self):
        cands = [DetectionCandidate(0.9, Box3D(0, 0, 0, 2, 2, 2)),
                 DetectionCandidate(0.8, Box3D(5, 5, 5, 7, 7, 7))]
        assert len(nms_merge(cands, 0.5)) == 2

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        cands = []
        for _ in range(20):
            lo = rng.uniform(0, 20, 3)
            ext = rng.uniform(1, 6, 3)
            cands.append(DetectionCandidate(
                float(rng.random()),
                Box3D(*lo, *(lo + ext))))
        once = nms_merge(cands, 0.3)
        twice = nms_merge(once, 0.3)
        assert [c.score for c in twice] == [c.score for c in once]

    def test_kept_scores_sorted_and_no_pair_overlaps(self):
        rng = np.random.default_rng(6)
        cands = []
        for _ in range(30):
            lo = rng.uniform(0, 15, 3)
            ext = rng.uniform(1, 8, 3)
            cands.append(DetectionCandidate(float(rng.random()), Box3D(*lo, *(lo + ext))))
        kept = nms_merge(cands, 0.4)
        scores = [c.score for c in kept]
        assert scores == sorted(scores, reverse=True)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert iou3d(kept[i].box, kept[j].box) < 0.4

    def test_bad_threshold_rejected(self):
        with pytest.raises(ValueError):
            nms_merge([], 1.5)


class TestHelpers:
    def test_sigma_rule(self):
        assert sigma_for_size(np.array([4, 20, 10]), R=4) == 1.0
        assert sigma_for_size(np.array([60, 80, 90]), R=4) == pytest.approx(2.5)

    def test_gamma_from_spacing(self):
        g = gamma_from_spacing((0.69, 0.69, 5.0))
        assert g[0] == 1.0
        assert g[1] == pytest.approx(1.0)
        assert g[2] == pytest.approx(7.2464, abs=1e-3)
