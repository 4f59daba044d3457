"""Trainable desk-scale lesion detector.

A volumetric CNN backbone is deliberately out of scope; instead each
phase volume is resampled to a fixed grid and reduced to per-cell
contrast/blob features: block mean deviation from the liver reference,
block texture energy, and center-surround responses split into in-plane
and along-z scales (the z cells cover far more millimetres than the
in-plane ones, so cubic windows would mix scales).

A small shared MLP with three heads learns the center heatmap, sub-cell
offsets, and box sizes with the real objectives: penalty-reduced focal
loss on the rendered anisotropic Gaussian targets plus L1 offset/size
losses at center cells, via plain SGD with hand-written gradients. Each
phase is an independent observation with shared weights; per-phase
candidates merge through NMS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from . import formats
from .config import Config
from .detection import (
    CenterSize,
    DetectionCandidate,
    GaussianSpec,
    LossConfig,
    box_to_center_size,
    center_l1_grad,
    center_size_to_box,
    decode_peaks,
    gamma_from_spacing,
    heatmap_focal_loss_grad,
    nms_merge,
    render_targets,
    sigma_for_size,
)
from .ops import relu_backward, relu_forward, sigmoid
from .synth import Manifest, StudyRecord
from .volume import PHASES, Volume, trilinear_resample

N_FEATURES = 11
N_HIDDEN = 16
RING_RADII_XY = (1, 2, 4, 6)
RING_RADII_Z = (1, 2)


@dataclass
class DetectorParams:
    w1: np.ndarray        # (H,F) shared trunk
    b1: np.ndarray        # (H,)
    heat_w: np.ndarray    # (H,)
    heat_b: np.ndarray    # (1,)
    size_w: np.ndarray    # (3,H)  sizes are exp(raw) voxels
    size_b: np.ndarray    # (3,)
    off_w: np.ndarray     # (3,H)
    off_b: np.ndarray     # (3,)
    feat_mean: np.ndarray
    feat_std: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in
                ("w1", "b1", "heat_w", "heat_b", "size_w", "size_b",
                 "off_w", "off_b", "feat_mean", "feat_std")}


def cell_features(data: np.ndarray, R: int) -> np.ndarray:
    """Per-cell features (F, W/R, H/R, D/R) from one resampled phase volume."""
    W, H, D = data.shape
    blocks = data.reshape(W // R, R, H // R, R, D // R, R)
    G = blocks.mean(axis=(1, 3, 5))
    S = blocks.std(axis=(1, 3, 5))
    ref = float(np.median(data[W // 4:3 * W // 4, H // 4:3 * H // 4, D // 4:3 * D // 4]))

    dev = (G - ref) / 30.0
    feats = [dev, np.abs(dev), S / 12.0]
    for r in RING_RADII_XY:
        n = (2 * r + 1) ** 2
        box = uniform_filter(G, size=(2 * r + 1, 2 * r + 1, 1), mode="nearest")
        ring = (box * n - G) / (n - 1)
        feats.append((G - ring) / 30.0)
    for r in RING_RADII_Z:
        n = 2 * r + 1
        boxz = uniform_filter(G, size=(1, 1, n), mode="nearest")
        ringz = (boxz * n - G) / (n - 1)
        feats.append((G - ringz) / 30.0)
    feats.append(np.abs(feats[4]))   # |in-plane blob response, r=2|
    feats.append(np.abs(feats[7]))   # |z blob response, r=1|
    return np.stack(feats, axis=0)


def _grid_scale(native_shape, grid_shape) -> np.ndarray:
    """Per-axis factor mapping native voxel coords to resampled coords."""
    return np.array([(t - 1) / (s - 1) for s, t in zip(native_shape, grid_shape)])


def _boxes_to_grid(record: StudyRecord, grid_shape, primary_only=True) -> list[CenterSize]:
    scale = _grid_scale(record.shape, grid_shape)
    out = []
    for tb in record.boxes:
        if primary_only and not tb.primary:
            continue
        cs = box_to_center_size(tb.box)
        out.append(CenterSize(cs.p * scale, np.maximum(cs.s * scale, 1e-3)))
    return out


def _study_targets(record: StudyRecord, cfg: Config):
    """Render per-box targets (each box with its own sigma) and combine."""
    grid = cfg.grid_shape
    R = cfg.downsample
    cells = tuple(g // R for g in grid)
    boxes = _boxes_to_grid(record, grid)
    if not boxes:
        raise ValueError(f"study {record.study_id} has no primary box")
    scale = _grid_scale(record.shape, grid)
    spacing = tuple(sp / sc for sp, sc in zip(record.spacing_mm, scale))
    gamma = gamma_from_spacing(spacing)

    combined = None
    for box in boxes:
        sigma = sigma_for_size(box.s, R, cfg.sigma_floor, cfg.sigma_size_divisor)
        spec = GaussianSpec(sigma=sigma, gamma=gamma)
        t = render_targets([box], cells, R, spec)
        if combined is None:
            combined = t
        else:
            np.maximum(combined.heatmap, t.heatmap, out=combined.heatmap)
            combined.offsets[:, t.center_mask] = t.offsets[:, t.center_mask]
            combined.sizes[:, t.center_mask] = t.sizes[:, t.center_mask]
            combined.center_mask |= t.center_mask
    return combined


def _load_phase_grids(manifest: Manifest, record: StudyRecord, cfg: Config):
    grids = {}
    for phase in PHASES:
        vol = formats.read_volume(manifest.path(record.volumes[phase]))
        grids[phase] = trilinear_resample(vol, cfg.grid_shape).data.astype(np.float64)
    return grids


def _forward(params: DetectorParams, feats: np.ndarray):
    """feats (F,*cells) -> hidden pre-activation, hidden, heads (flattened)."""
    f = ((feats - params.feat_mean[:, None, None, None])
         / params.feat_std[:, None, None, None])
    fflat = f.reshape(N_FEATURES, -1)
    pre = params.w1 @ fflat + params.b1[:, None]       # (H,M)
    hid = relu_forward(pre)
    heat_logit = params.heat_w @ hid + params.heat_b
    size_raw = params.size_w @ hid + params.size_b[:, None]
    off_raw = params.off_w @ hid + params.off_b[:, None]
    return fflat, pre, hid, heat_logit, size_raw, off_raw


def train_detector(manifest: Manifest, cfg: Config, log=None) -> DetectorParams:
    """Fit the detection heads on the train-split studies."""
    records = manifest.split_records("train")
    if not records:
        raise ValueError("manifest has no train-split studies")
    R = cfg.downsample
    samples = []
    sizes_accum = []
    for record in records:
        target = _study_targets(record, cfg)
        grids = _load_phase_grids(manifest, record, cfg)
        for phase in PHASES:
            samples.append((cell_features(grids[phase], R), target))
        sizes_accum.append(target.sizes[:, target.center_mask])

    feats_flat = np.concatenate([s[0].reshape(N_FEATURES, -1) for s in samples], axis=1)
    feat_mean = feats_flat.mean(axis=1)
    feat_std = np.maximum(feats_flat.std(axis=1), 1e-6)
    mean_size = np.concatenate(sizes_accum, axis=1).mean(axis=1)

    rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 0xDE7)))
    params = DetectorParams(
        w1=rng.normal(0.0, np.sqrt(2.0 / N_FEATURES), (N_HIDDEN, N_FEATURES)),
        b1=np.zeros(N_HIDDEN),
        heat_w=np.zeros(N_HIDDEN), heat_b=np.array([-2.0]),
        size_w=np.zeros((3, N_HIDDEN)), size_b=np.log(mean_size),
        off_w=np.zeros((3, N_HIDDEN)), off_b=np.full(3, 0.5),
        feat_mean=feat_mean, feat_std=feat_std)

    loss_cfg = LossConfig(alpha=cfg.focal_alpha, beta=cfg.focal_beta,
                          lambda_size=cfg.lambda_size, lambda_off=cfg.lambda_off)
    lr = cfg.detector_lr
    for epoch in range(cfg.detector_epochs):
        order = rng.permutation(len(samples))
        total = 0.0
        for idx in order:
            feats, target = samples[idx]
            cells = target.heatmap.shape
            fflat, pre, hid, heat_logit, size_raw, off_raw = _forward(params, feats)

            heat = sigmoid(heat_logit.reshape(cells))
            lk, dheat = heatmap_focal_loss_grad(heat, target, loss_cfg)
            dlogit = (dheat * heat * (1 - heat)).reshape(-1)

            size_pred = np.exp(size_raw).reshape((3,) + cells)
            lsize, dsize = center_l1_grad(size_pred, target.sizes, target.center_mask)
            dsize_raw = cfg.lambda_size * (dsize.reshape(3, -1) * np.exp(size_raw))

            off_pred = off_raw.reshape((3,) + cells)
            loff, doff = center_l1_grad(off_pred, target.offsets, target.center_mask)
            doff_raw = cfg.lambda_off * doff.reshape(3, -1)

            dhid = (np.outer(params.heat_w, dlogit)
                    + params.size_w.T @ dsize_raw + params.off_w.T @ doff_raw)
            dpre = relu_backward(pre, dhid)

            params.heat_w -= lr * (hid @ dlogit)
            params.heat_b -= lr * dlogit.sum()
            params.size_w -= lr * (dsize_raw @ hid.T)
            params.size_b -= lr * dsize_raw.sum(axis=1)
            params.off_w -= lr * (doff_raw @ hid.T)
            params.off_b -= lr * doff_raw.sum(axis=1)
            params.w1 -= lr * (dpre @ fflat.T)
            params.b1 -= lr * dpre.sum(axis=1)
            total += lk + cfg.lambda_size * lsize + cfg.lambda_off * loff
        if log:
            log(f"detector epoch {epoch + 1}/{cfg.detector_epochs} "
                f"loss {total / len(samples):.4f}")
    return params


def predict_grids(feats: np.ndarray, params: DetectorParams):
    """Heatmap, clamped sizes, clamped offsets on the cell grid."""
    cells = feats.shape[1:]
    _, _, _, heat_logit, size_raw, off_raw = _forward(params, feats)
    heat = sigmoid(heat_logit).reshape(cells)
    sizes = np.maximum(np.exp(size_raw).reshape((3,) + cells), 1.0)
    offs = np.clip(off_raw.reshape((3,) + cells), 0.0, 0.999)
    return heat, sizes, offs


def detect_study(volumes: dict[str, Volume], params: DetectorParams,
                 cfg: Config) -> list[DetectionCandidate]:
    """Run the detector per phase, merge candidates, return the top-k in
    native voxel coordinates."""
    native_shape = volumes[PHASES[0]].shape
    inv_scale = 1.0 / _grid_scale(native_shape, cfg.grid_shape)
    pooled: list[DetectionCandidate] = []
    for phase in PHASES:
        grid = trilinear_resample(volumes[phase], cfg.grid_shape).data.astype(np.float64)
        feats = cell_features(grid, cfg.downsample)
        heat, sizes, offs = predict_grids(feats, params)
        for cand in decode_peaks(heat, offs, sizes, cfg.downsample, cfg.topk, phase):
            cs = box_to_center_size(cand.box)
            native = CenterSize(cs.p * inv_scale, cs.s * inv_scale)
            pooled.append(DetectionCandidate(cand.score, center_size_to_box(native), phase))
    merged = nms_merge(pooled, cfg.nms_iou)
    return merged[:cfg.topk]


def save_detector(path: str, params: DetectorParams, cfg: Config) -> None:
    meta = {"kind": "detector", "n_features": N_FEATURES, "n_hidden": N_HIDDEN,
            "grid_shape": list(cfg.grid_shape), "downsample": cfg.downsample}
    formats.save_checkpoint(path, params.tensors(), meta)


def load_detector(path: str) -> DetectorParams:
    tensors, meta = formats.load_checkpoint(path)
    if meta.get("kind") != "detector":
        raise ValueError(f"{path} is not a detector checkpoint")
    return DetectorParams(**{k: tensors[k].astype(np.float64) for k in tensors})
