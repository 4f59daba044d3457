"""Primary tumor selection: key-slice choice per 3D candidate, primary /
non-primary filtering through a pluggable slice classifier, and
detection-score tie-breaking.

Per-slice lesion masks are an input here (the generator supplies noisy
ground-truth masks); the key slice of a candidate is the slice with the
greatest mask area inside the candidate's xy footprint, ties resolved to
the smallest z. Candidates whose footprint contains no mask evidence at
all are flagged and excluded downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Config
from .detection import Box3D, DetectionCandidate
from .volume import PHASES, Volume


class NoEvidenceError(ValueError):
    """Every slice of the candidate's footprint has zero mask area."""


@dataclass
class SliceMaskStack:
    per_slice_area: list[int]
    z_start: int                 # absolute z of per_slice_area[0]


@dataclass
class KeySlice:
    candidate_id: str
    z_index: int                           # absolute slice index
    roi_images: dict[str, np.ndarray]      # phase -> (canvas, canvas) HU crop
    roi_mask: np.ndarray                   # (canvas, canvas) binary
    box_rect: tuple[int, int, int, int]    # candidate bbox inside the crop (x0,y0,x1,y1)


@dataclass
class PrimaryDecision:
    candidate_id: str
    is_primary: bool
    classifier_score: float
    detection_score: float


@dataclass
class PtsResult:
    status: str                            # ok | no_detection | no_primary | no_evidence
    candidate_id: str | None = None
    key_slice: KeySlice | None = None
    decisions: list[PrimaryDecision] | None = None
    fallback_used: bool = False


def _clamp_span(lo: float, hi: float, n: int) -> tuple[int, int]:
    a = max(0, int(np.floor(lo)))
    b = min(n, int(np.ceil(hi)))
    return a, max(b, a + 1)


def mask_stack(box: Box3D, mask: np.ndarray) -> SliceMaskStack:
    """Per-slice mask pixel counts restricted to the box's xy footprint."""
    W, H, D = mask.shape
    x0, x1 = _clamp_span(box.x1, box.x2, W)
    y0, y1 = _clamp_span(box.y1, box.y2, H)
    z0, z1 = _clamp_span(box.z1, box.z2, D)
    areas = [int(mask[x0:x1, y0:y1, z].sum()) for z in range(z0, z1)]
    return SliceMaskStack(per_slice_area=areas, z_start=z0)


def select_key_slice(candidate_id: str, stack: SliceMaskStack) -> int:
    """Absolute z of the greatest-area slice; ties take the smallest z."""
    if not stack.per_slice_area:
        raise NoEvidenceError(f"candidate {candidate_id}: empty slice stack")
    areas = np.asarray(stack.per_slice_area)
    if areas.max() == 0:
        raise NoEvidenceError(f"candidate {candidate_id}: no mask evidence in any slice")
    return stack.z_start + int(np.argmax(areas))


def crop_slice(plane: np.ndarray, box: Box3D, margin: float, canvas: int,
               fill: float = 25.0):
    """Native-resolution crop around the box center on a fixed canvas.

    Context is limited to the box expanded by ``margin`` per side (the
    rest of the canvas keeps the neutral fill value), so every sample sees
    the same relative amount of surroundings regardless of box size.
    Returns the crop and the box rectangle inside it (x0,y0,x1,y1)."""
    W, H = plane.shape
    cx, cy = (box.x1 + box.x2) / 2.0, (box.y1 + box.y2) / 2.0
    out = np.full((canvas, canvas), fill, dtype=np.float32)
    x_lo = int(round(cx - canvas / 2.0))
    y_lo = int(round(cy - canvas / 2.0))

    mx = (box.x2 - box.x1) * margin
    my = (box.y2 - box.y1) * margin
    vx0 = max(0, x_lo, int(np.floor(box.x1 - mx)))
    vx1 = min(W, x_lo + canvas, int(np.ceil(box.x2 + mx)))
    vy0 = max(0, y_lo, int(np.floor(box.y1 - my)))
    vy1 = min(H, y_lo + canvas, int(np.ceil(box.y2 + my)))
    if vx1 > vx0 and vy1 > vy0:
        # image rows are y, columns are x
        out[vy0 - y_lo:vy1 - y_lo, vx0 - x_lo:vx1 - x_lo] = plane[vx0:vx1, vy0:vy1].T
    rect = (int(round(box.x1 - x_lo)), int(round(box.y1 - y_lo)),
            int(round(box.x2 - x_lo)), int(round(box.y2 - y_lo)))
    return out, rect


def build_key_slice(candidate_id: str, box: Box3D, z: int,
                    volumes: dict[str, Volume], mask: np.ndarray,
                    cfg: Config) -> KeySlice:
    images = {}
    for phase in PHASES:
        plane = volumes[phase].data[:, :, z]
        crop, rect = crop_slice(plane, box, cfg.crop_margin, cfg.canvas_size)
        images[phase] = crop
    mcrop, rect = crop_slice(mask[:, :, z].astype(np.float32), box,
                             cfg.crop_margin, cfg.canvas_size, fill=0.0)
    return KeySlice(candidate_id=candidate_id, z_index=z, roi_images=images,
                    roi_mask=(mcrop >= 0.5).astype(np.float32), box_rect=rect)


def filter_primary(decisions: list[PrimaryDecision]) -> str | None:
    """Largest detection score among candidates classified primary."""
    primaries = [d for d in decisions if d.is_primary]
    if not primaries:
        return None
    return max(primaries, key=lambda d: d.detection_score).candidate_id


def pts_pipeline(volumes: dict[str, Volume], candidates: list[DetectionCandidate],
                 mask: np.ndarray, classify_primary, cfg: Config) -> PtsResult:
    """Compose key-slice selection, the primary/non-primary classifier, and
    score tie-breaking. ``classify_primary(key_slice) -> probability`` may
    be None, which marks every candidate primary (detection-score order).

    When no candidate passes the primary filter, the top-scoring candidate
    with evidence is used as a fallback so downstream classification still
    emits exactly one prediction per study."""
    if not candidates:
        return PtsResult(status="no_detection")
    key_slices: dict[str, KeySlice] = {}
    decisions: list[PrimaryDecision] = []
    for rank, cand in enumerate(candidates):
        cid = f"c{rank:02d}"
        try:
            z = select_key_slice(cid, mask_stack(cand.box, mask))
        except NoEvidenceError:
            continue
        ks = build_key_slice(cid, cand.box, z, volumes, mask, cfg)
        key_slices[cid] = ks
        score = 1.0 if classify_primary is None else float(classify_primary(ks))
        decisions.append(PrimaryDecision(
            candidate_id=cid, is_primary=score >= cfg.primary_threshold,
            classifier_score=score, detection_score=cand.score))
    if not decisions:
        return PtsResult(status="no_evidence", decisions=[])
    chosen = filter_primary(decisions)
    fallback = False
    if chosen is None:
        chosen = max(decisions, key=lambda d: d.detection_score).candidate_id
        fallback = True
    result = PtsResult(status="no_primary" if fallback else "ok",
                       candidate_id=chosen, key_slice=key_slices[chosen],
                       decisions=decisions, fallback_used=fallback)
    return result


def top_area_slices(mask: np.ndarray, box: Box3D, k: int) -> list[int]:
    """Absolute z indices of the k largest-area slices (area desc, then z asc)."""
    stack = mask_stack(box, mask)
    areas = np.asarray(stack.per_slice_area)
    order = sorted(range(len(areas)), key=lambda i: (-areas[i], i))
    return [stack.z_start + i for i in order[:k] if areas[i] > 0]
