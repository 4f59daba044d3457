import numpy as np
import pytest

from hepatex.config import Config
from hepatex.detection import Box3D, DetectionCandidate
from hepatex.pts import (
    NoEvidenceError,
    PrimaryDecision,
    SliceMaskStack,
    build_key_slice,
    crop_slice,
    filter_primary,
    mask_stack,
    pts_pipeline,
    select_key_slice,
    top_area_slices,
)
from hepatex.volume import PHASES, Volume


def volume_set(shape=(40, 40, 10), seed=0):
    rng = np.random.default_rng(seed)
    return {p: Volume(rng.normal(60, 5, shape).astype(np.float32), (1, 1, 5), p)
            for p in PHASES}


def mask_with_blob(shape=(40, 40, 10), center=(20, 20, 5), r=(6, 6, 2)):
    mask = np.zeros(shape, np.uint8)
    xs, ys, zs = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
    inside = (((xs - center[0]) / r[0]) ** 2 + ((ys - center[1]) / r[1]) ** 2
              + ((zs - center[2]) / r[2]) ** 2) <= 1
    mask[inside] = 1
    return mask


class TestSelectKeySlice:
    def test_first_maximum_wins(self):
        stack = SliceMaskStack([0, 5, 9, 9, 2], z_start=3)
        assert select_key_slice("c00", stack) == 5

    def test_single_slice(self):
        assert select_key_slice("c00", SliceMaskStack([7], z_start=0)) == 0

    def test_all_zero_flags_no_evidence(self):
        with pytest.raises(NoEvidenceError):
            select_key_slice("c00", SliceMaskStack([0, 0, 0], z_start=0))

    def test_invariant_to_appended_zero_slices(self):
        stack = SliceMaskStack([3, 8, 1], z_start=2)
        padded = SliceMaskStack([3, 8, 1, 0, 0], z_start=2)
        assert select_key_slice("c", stack) == select_key_slice("c", padded)


class TestMaskStack:
    def test_areas_follow_footprint(self):
        mask = mask_with_blob()
        box = Box3D(12, 12, 2, 28, 28, 9)
        stack = mask_stack(box, mask)
        assert stack.z_start == 2
        areas = stack.per_slice_area
        assert max(areas) == areas[3]  # z=5 has the full blob section
        assert areas[3] > areas[4] > 0

    def test_empty_footprint(self):
        mask = mask_with_blob()
        stack = mask_stack(Box3D(0, 0, 0, 4, 4, 2), mask)
        assert max(stack.per_slice_area) == 0


class TestFilterPrimary:
    def make(self, cid, primary, det):
        return PrimaryDecision(cid, primary, 0.9 if primary else 0.1, det)

    def test_largest_detection_score_among_primaries(self):
        decisions = [self.make("a", True, 0.7), self.make("b", True, 0.9),
                     self.make("c", False, 0.99)]
        assert filter_primary(decisions) == "b"

    def test_none_when_no_primary(self):
        assert filter_primary([self.make("a", False, 0.9)]) is None

    def test_single_primary_wins_regardless(self):
        decisions = [self.make("a", True, 0.1), self.make("b", False, 0.95)]
        assert filter_primary(decisions) == "a"

    def test_invariant_under_monotone_rescaling(self):
        decisions = [self.make("a", True, 0.3), self.make("b", True, 0.6),
                     self.make("c", True, 0.5)]
        before = filter_primary(decisions)
        for d in decisions:
            d.detection_score = 2.0 * d.detection_score + 1.0
        assert filter_primary(decisions) == before


class TestCropSlice:
    def test_box_rect_position(self):
        plane = np.zeros((40, 40), np.float32)
        plane[10:20, 15:25] = 100.0
        box = Box3D(10, 15, 0, 20, 25, 1)
        crop, rect = crop_slice(plane, box, margin=0.25, canvas=32)
        x0, y0, x1, y1 = rect
        assert (x1 - x0, y1 - y0) == (10, 10)
        np.testing.assert_allclose(crop[y0:y1, x0:x1], 100.0)

    def test_margin_limits_context(self):
        plane = np.full((60, 60), 77.0, np.float32)
        box = Box3D(26, 26, 0, 34, 34, 1)
        crop, _ = crop_slice(plane, box, margin=0.25, canvas=48, fill=0.0)
        assert crop[24, 24] == 77.0         # inside the box
        assert crop[0, 0] == 0.0            # far corner is fill
        # visible region is the box plus 25% per side (8px box -> 2px margin)
        assert crop[24, 24 - 4 - 2 + 1] == 77.0
        assert crop[24, 24 - 4 - 2 - 2] == 0.0


class TestPipeline:
    def classifier_by_area(self, threshold=30):
        def classify(ks):
            return 0.9 if ks.roi_mask.sum() >= threshold else 0.1
        return classify

    def test_single_candidate_ok(self):
        cfg = Config(canvas_size=32)
        vols = volume_set()
        mask = mask_with_blob()
        cands = [DetectionCandidate(0.8, Box3D(13, 13, 2, 27, 27, 8), "A")]
        result = pts_pipeline(vols, cands, mask, self.classifier_by_area(), cfg)
        assert result.status == "ok"
        assert result.candidate_id == "c00"
        assert result.key_slice.z_index == 5

    def test_vessel_rejected_lesion_chosen(self):
        cfg = Config(canvas_size=32)
        vols = volume_set()
        mask = mask_with_blob()
        cands = [
            DetectionCandidate(0.95, Box3D(2, 2, 2, 6, 6, 8), "A"),    # no mask evidence
            DetectionCandidate(0.60, Box3D(13, 13, 2, 27, 27, 8), "V"),
        ]
        result = pts_pipeline(vols, cands, mask, self.classifier_by_area(), cfg)
        assert result.status == "ok"
        assert result.candidate_id == "c01"

    def test_empty_candidates_is_no_detection(self):
        cfg = Config()
        result = pts_pipeline(volume_set(), [], mask_with_blob(), None, cfg)
        assert result.status == "no_detection"

    def test_all_no_evidence(self):
        cfg = Config(canvas_size=32)
        mask = np.zeros((40, 40, 10), np.uint8)
        cands = [DetectionCandidate(0.8, Box3D(5, 5, 2, 15, 15, 8), "A")]
        result = pts_pipeline(volume_set(), cands, mask, None, cfg)
        assert result.status == "no_evidence"

    def test_no_primary_falls_back_to_top_score(self):
        cfg = Config(canvas_size=32)
        vols = volume_set()
        mask = mask_with_blob()
        cands = [DetectionCandidate(0.7, Box3D(13, 13, 2, 27, 27, 8), "A"),
                 DetectionCandidate(0.9, Box3D(14, 14, 2, 26, 26, 8), "V")]
        result = pts_pipeline(vols, cands, mask, lambda ks: 0.0, cfg)
        assert result.status == "no_primary"
        assert result.fallback_used
        assert result.candidate_id == "c01"

    def test_deterministic(self):
        cfg = Config(canvas_size=32)
        vols = volume_set()
        mask = mask_with_blob()
        cands = [DetectionCandidate(0.8, Box3D(13, 13, 2, 27, 27, 8), "A")]
        r1 = pts_pipeline(vols, cands, mask, self.classifier_by_area(), cfg)
        r2 = pts_pipeline(vols, cands, mask, self.classifier_by_area(), cfg)
        assert (r1.candidate_id, r1.key_slice.z_index) == (r2.candidate_id, r2.key_slice.z_index)


class TestTopAreaSlices:
    def test_order_and_tiebreak(self):
        mask = np.zeros((10, 10, 6), np.uint8)
        mask[2:8, 2:8, 1] = 1      # area 36
        mask[2:6, 2:6, 2] = 1      # area 16
        mask[2:6, 2:6, 4] = 1      # area 16, later z
        box = Box3D(0, 0, 0, 10, 10, 6)
        assert top_area_slices(mask, box, 3) == [1, 2, 4]
        assert top_area_slices(mask, box, 5) == [1, 2, 4]  # zero-area slices dropped
