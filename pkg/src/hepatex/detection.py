"""Anchor-free 3D detection math: anisotropic Gaussian center targets,
penalty-reduced focal / L1 losses, peak decoding, and 3D NMS.

Center targets are rendered per box as

    Y_xyz = exp(-[((x-px)/gx)^2 + ((y-py)/gy)^2 + ((z-pz)/gz)^2] / (2 sigma^2))

on the downsampled grid (factor R), where the per-axis gamma coefficients
compensate for non-isotropic voxel spacing. Overlapping Gaussians combine
by elementwise max so every center cell stays exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

PRED_CLIP = 1e-6


@dataclass
class Box3D:
    x1: float
    y1: float
    z1: float
    x2: float
    y2: float
    z2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2 and self.z1 < self.z2):
            raise ValueError(f"degenerate box {self.astuple()}")

    def astuple(self):
        return (self.x1, self.y1, self.z1, self.x2, self.y2, self.z2)

    def volume(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1) * (self.z2 - self.z1)


@dataclass
class CenterSize:
    p: np.ndarray   # (3,) center, continuous voxels
    s: np.ndarray   # (3,) extents, voxels

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        if np.any(self.s <= 0):
            raise ValueError(f"box size must be positive, got {self.s}")


@dataclass
class GaussianSpec:
    sigma: float
    gamma: tuple[float, float, float]

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if any(g <= 0 for g in self.gamma):
            raise ValueError("gamma coefficients must be positive")


@dataclass
class HeatTarget:
    heatmap: np.ndarray       # (Wg,Hg,Dg) in [0,1]
    offsets: np.ndarray       # (3,Wg,Hg,Dg), defined at center cells
    sizes: np.ndarray         # (3,Wg,Hg,Dg), defined at center cells
    center_mask: np.ndarray   # bool (Wg,Hg,Dg)
    R: int


@dataclass
class DetectionCandidate:
    score: float
    box: Box3D
    phase: str = "UNKNOWN"


@dataclass
class LossConfig:
    alpha: float = 2.0        # focal exponent on the prediction
    beta: float = 4.0         # penalty exponent on the soft target
    lambda_size: float = 0.1
    lambda_off: float = 1.0

    def __post_init__(self):
        if min(self.alpha, self.beta) <= 0 or self.lambda_size < 0 or self.lambda_off < 0:
            raise ValueError("loss exponents must be positive and weights non-negative")


def box_to_center_size(b: Box3D) -> CenterSize:
    p = np.array([(b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2, (b.z1 + b.z2) / 2])
    s = np.array([b.x2 - b.x1, b.y2 - b.y1, b.z2 - b.z1])
    return CenterSize(p=p, s=s)


def center_size_to_box(cs: CenterSize) -> Box3D:
    h = cs.s / 2
    return Box3D(cs.p[0] - h[0], cs.p[1] - h[1], cs.p[2] - h[2],
                 cs.p[0] + h[0], cs.p[1] + h[1], cs.p[2] + h[2])


def sigma_for_size(s: np.ndarray, R: int, floor: float = 1.0,
                   divisor: float = 6.0) -> float:
    """Per-object kernel width at heatmap scale: max(floor, min extent / (divisor*R))."""
    return max(floor, float(np.min(s)) / (divisor * R))


def gamma_from_spacing(spacing_mm) -> tuple[float, float, float]:
    """Resolution coefficients normalized so gamma_x == 1."""
    sx, sy, sz = spacing_mm
    return (1.0, sy / sx, sz / sx)


def render_targets(boxes: list[CenterSize], out_shape: tuple[int, int, int],
                   R: int, spec: GaussianSpec) -> HeatTarget:
    Wg, Hg, Dg = out_shape
    heat = np.zeros(out_shape, dtype=np.float64)
    offsets = np.zeros((3,) + tuple(out_shape), dtype=np.float64)
    sizes = np.zeros((3,) + tuple(out_shape), dtype=np.float64)
    center_mask = np.zeros(out_shape, dtype=bool)

    gx, gy, gz = spec.gamma
    xs = np.arange(Wg, dtype=np.float64)
    ys = np.arange(Hg, dtype=np.float64)
    zs = np.arange(Dg, dtype=np.float64)

    for cs in boxes:
        pt = np.floor(cs.p / R).astype(int)
        if np.any(pt < 0) or pt[0] >= Wg or pt[1] >= Hg or pt[2] >= Dg:
            raise ValueError(
                f"box center {cs.p} maps to cell {tuple(pt)} outside grid {out_shape}")
        ex = ((xs - pt[0]) / gx) ** 2
        ey = ((ys - pt[1]) / gy) ** 2
        ez = ((zs - pt[2]) / gz) ** 2
        dist = ex[:, None, None] + ey[None, :, None] + ez[None, None, :]
        np.maximum(heat, np.exp(-dist / (2.0 * spec.sigma ** 2)), out=heat)
        center_mask[tuple(pt)] = True
        offsets[:, pt[0], pt[1], pt[2]] = cs.p / R - pt
        sizes[:, pt[0], pt[1], pt[2]] = cs.s
    return HeatTarget(heatmap=heat, offsets=offsets, sizes=sizes,
                      center_mask=center_mask, R=R)


def clip_predictions(pred: np.ndarray) -> np.ndarray:
    return np.clip(pred, PRED_CLIP, 1.0 - PRED_CLIP)


def heatmap_focal_loss(pred: np.ndarray, target: HeatTarget,
                       cfg: LossConfig | None = None) -> float:
    """Penalty-reduced pixelwise focal loss, averaged over the N center cells.

    Center cells (Y == 1) contribute (1-p)^alpha log p; everything else
    contributes (1-Y)^beta p^alpha log(1-p).
    """
    cfg = cfg or LossConfig()
    n = int(target.center_mask.sum())
    if n == 0:
        raise ValueError("target has no center cells")
    p = clip_predictions(pred)
    y = target.heatmap
    pos = target.center_mask
    pos_term = ((1 - p) ** cfg.alpha * np.log(p))[pos].sum()
    neg_term = ((1 - y) ** cfg.beta * p ** cfg.alpha * np.log1p(-p))[~pos].sum()
    return float(-(pos_term + neg_term) / n)


def heatmap_focal_loss_grad(pred: np.ndarray, target: HeatTarget,
                            cfg: LossConfig | None = None) -> tuple[float, np.ndarray]:
    """Loss and dL/dpred. Clipped cells get zero gradient."""
    cfg = cfg or LossConfig()
    n = int(target.center_mask.sum())
    if n == 0:
        raise ValueError("target has no center cells")
    p = clip_predictions(pred)
    y = target.heatmap
    pos = target.center_mask
    a, b = cfg.alpha, cfg.beta

    grad = np.empty_like(p)
    gp = (1 - p) ** a / p - a * (1 - p) ** (a - 1) * np.log(p)
    gn = (1 - y) ** b * (a * p ** (a - 1) * np.log1p(-p) - p ** a / (1 - p))
    grad[pos] = -gp[pos] / n
    grad[~pos] = -gn[~pos] / n
    grad[(pred <= PRED_CLIP) | (pred >= 1 - PRED_CLIP)] = 0.0

    pos_term = ((1 - p) ** a * np.log(p))[pos].sum()
    neg_term = ((1 - y) ** b * p ** a * np.log1p(-p))[~pos].sum()
    return float(-(pos_term + neg_term) / n), grad


def _center_l1(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    n = int(mask.sum())
    if n == 0:
        raise ValueError("no center cells to evaluate the L1 loss at")
    diff = np.abs(pred[:, mask] - truth[:, mask])
    return float(diff.sum() / n)


def size_loss(pred_size: np.ndarray, target: HeatTarget) -> float:
    """Mean over boxes of the L1 norm between predicted and true extents,
    evaluated only at center cells."""
    return _center_l1(pred_size, target.sizes, target.center_mask)


def offset_loss(pred_off: np.ndarray, target: HeatTarget) -> float:
    return _center_l1(pred_off, target.offsets, target.center_mask)


def center_l1_grad(pred: np.ndarray, truth: np.ndarray,
                   mask: np.ndarray) -> tuple[float, np.ndarray]:
    n = int(mask.sum())
    if n == 0:
        raise ValueError("no center cells to evaluate the L1 loss at")
    grad = np.zeros_like(pred)
    diff = pred[:, mask] - truth[:, mask]
    grad[:, mask] = np.sign(diff) / n
    return float(np.abs(diff).sum() / n), grad


def total_loss(parts: tuple[float, float, float], cfg: LossConfig | None = None) -> float:
    """parts = (heatmap focal, size L1, offset L1)."""
    cfg = cfg or LossConfig()
    lk, lsize, loff = parts
    return float(lk + cfg.lambda_size * lsize + cfg.lambda_off * loff)


def decode_peaks(heatmap: np.ndarray, offsets: np.ndarray, sizes: np.ndarray,
                 R: int, topk: int, phase: str = "UNKNOWN") -> list[DetectionCandidate]:
    """Extract up to ``topk`` candidates from heatmap peaks.

    A cell is a peak iff it is >= all 26 neighbors. Ties between equal
    peak values break lexicographically by (x,y,z) cell index. The center
    is (cell + offset) * R and the box comes from the predicted size.
    """
    if topk < 1:
        raise ValueError("topk must be >= 1")
    local_max = maximum_filter(heatmap, size=3, mode="constant", cval=-np.inf)
    peak = heatmap >= local_max
    idx = np.flatnonzero(peak)
    if idx.size == 0:
        return []
    vals = heatmap.reshape(-1)[idx]
    # stable sort on -value keeps flat-index (= lexicographic x,y,z) order for ties
    order = np.argsort(-vals, kind="stable")[:topk]
    cells = np.stack(np.unravel_index(idx[order], heatmap.shape), axis=1)

    out = []
    for cell, val in zip(cells, vals[order]):
        cx, cy, cz = cell
        off = offsets[:, cx, cy, cz]
        size = sizes[:, cx, cy, cz]
        center = (cell + off) * R
        if np.any(size <= 0):
            continue
        box = center_size_to_box(CenterSize(p=center, s=size))
        out.append(DetectionCandidate(score=float(val), box=box, phase=phase))
    return out


def iou3d(a: Box3D, b: Box3D) -> float:
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    iz = min(a.z2, b.z2) - max(a.z1, b.z1)
    if ix <= 0 or iy <= 0 or iz <= 0:
        return 0.0
    inter = ix * iy * iz
    return float(inter / (a.volume() + b.volume() - inter))


def nms_merge(cands: list[DetectionCandidate], iou_thresh: float) -> list[DetectionCandidate]:
    """Greedy NMS by descending score over one pooled candidate list.

    A candidate is suppressed when its IoU with any already-kept candidate
    reaches the threshold. Candidates from all phases compete together.
    """
    if not 0 < iou_thresh < 1:
        raise ValueError(f"iou threshold must be in (0,1), got {iou_thresh}")
    ranked = sorted(cands, key=lambda c: -c.score)
    kept: list[DetectionCandidate] = []
    for cand in ranked:
        if all(iou3d(cand.box, k.box) < iou_thresh for k in kept):
            kept.append(cand)
    return kept
