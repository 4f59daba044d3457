"""Lesion-type classification on masked texture encodings.

The descriptor extractor is a small conv stack (two 3x3 stride-2 layers
with ReLU) over a 5-channel input: the four contrast phases plus the
region mask as an extra channel. Descriptors feed the learnable-codebook
encoding; the aggregation mask gates which spatial cells contribute. A
linear head with softmax produces class probabilities, trained with a
class-weighted focal loss

    L = -w_label (1 - p_label)^gamma log(p_label),   gamma = 2,

under plain SGD (lr 0.004). Two input modes share the architecture:
"sadt" keeps the native-resolution crop with its mask; "deepten" resizes
the bounding-box crop to a fixed square and aggregates everywhere
(mask identically 1). "ksf" is the binary primary/non-primary variant.
Every backward pass is hand-written and verified against central
differences. A raw-patch descriptor mode (block means/stds, no conv)
exists for ablation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import formats
from .config import CLASS_NAMES, Config
from .encoding import (Codebook, downsample_mask, encode_batch_backward,
                       encode_batch_forward)
from .ops import (
    _conv2d_forward_cols,
    bilinear_resize,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
    softmax,
)

PROB_CLIP = 1e-6
HU_CENTER = 50.0
HU_SCALE = 100.0
KSF_CLASSES = ("NonPrimary", "Primary")


@dataclass
class ClassifierParams:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    codewords: np.ndarray     # (K, Dd)
    smoothing: np.ndarray     # (K,)
    head_w: np.ndarray        # (C, K*Dd)
    head_b: np.ndarray        # (C,)
    desc_mean: np.ndarray     # (Dd,) frozen standardization from the warm-up pass
    desc_std: np.ndarray      # (Dd,)
    classes: tuple[str, ...]
    mode: str
    enc_scale: float = 20.0   # fixed gain between the unit-norm encoding and the head
    conv2_stride: int = 2

    def tensors(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in
                ("conv1_w", "conv1_b", "conv2_w", "conv2_b",
                 "codewords", "smoothing", "head_w", "head_b",
                 "desc_mean", "desc_std")}

    def codebook(self) -> Codebook:
        return Codebook(self.codewords, self.smoothing)


@dataclass
class Sample:
    image: np.ndarray    # (5, H, W) normalized
    delta: np.ndarray    # (M,) aggregation mask on the descriptor grid
    label: str


def class_weight_vector(classes, weights: dict) -> np.ndarray:
    return np.array([float(weights.get(c, 1.0)) for c in classes])


def head_forward(encoding_vec: np.ndarray, head_w: np.ndarray,
                 head_b: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Softmax class probabilities from a flattened encoding.

    ``scale`` is a fixed gain applied before the linear layer; unit-norm
    encodings are too small for SGD to separate otherwise."""
    if encoding_vec.shape[-1] != head_w.shape[1]:
        raise ValueError(
            f"encoding length {encoding_vec.shape[-1]} does not match head "
            f"weight shape {head_w.shape}")
    return softmax((scale * encoding_vec) @ head_w.T + head_b, axis=-1)


def weighted_focal_loss(probs: np.ndarray, label_idx: int, weights: np.ndarray,
                        gamma: float) -> float:
    if not 0 <= label_idx < len(weights):
        raise ValueError(f"label index {label_idx} out of range for {len(weights)} classes")
    p = float(np.clip(probs[label_idx], PROB_CLIP, 1.0 - PROB_CLIP))
    return float(-weights[label_idx] * (1.0 - p) ** gamma * np.log(p))


def focal_loss_from_logits(logits: np.ndarray, label_idx: np.ndarray,
                           weights: np.ndarray, gamma: float):
    """Batched loss (mean) and gradient w.r.t. logits.

    logits: (B,C); label_idx: (B,) ints. The focal term and the softmax
    Jacobian are chained analytically.
    """
    B = logits.shape[0]
    p = softmax(logits, axis=1)
    rows = np.arange(B)
    pl = np.clip(p[rows, label_idx], PROB_CLIP, 1.0 - PROB_CLIP)
    w = weights[label_idx]
    loss = float(np.mean(-w * (1.0 - pl) ** gamma * np.log(pl)))

    dpl = -w * ((1.0 - pl) ** gamma / pl - gamma * (1.0 - pl) ** (gamma - 1) * np.log(pl))
    dlogits = p * (-(pl * dpl)[:, None])
    dlogits[rows, label_idx] += dpl * pl
    return loss, dlogits.astype(logits.dtype) / B


def descriptor_grid(canvas: int, conv2_stride: int = 2) -> tuple[int, int]:
    """Output grid of the conv stack (stride 2, then conv2_stride)."""
    h = -(-canvas // 2)
    h = -(-h // conv2_stride)
    return h, h


def forward_batch(params: ClassifierParams, images: np.ndarray, deltas: np.ndarray):
    """images (B,5,H,W), deltas (B,M) -> probs (B,C) plus cache for backward.
    The im2col buffers are cached so backward skips re-extraction."""
    a1_pre, cols1 = _conv2d_forward_cols(images, params.conv1_w, params.conv1_b, 2)
    a1 = relu_forward(a1_pre)
    a2_pre, cols2 = _conv2d_forward_cols(a1, params.conv2_w, params.conv2_b,
                                         params.conv2_stride)
    fields = relu_forward(a2_pre)
    B, Dd, h, w = fields.shape
    flat = fields.reshape(B, Dd, h * w).transpose(0, 2, 1)     # (B,M,Dd)
    flat = (flat - params.desc_mean) / params.desc_std
    enc, enc_cache = encode_batch_forward(flat, params.codebook(), deltas)
    logits = (params.enc_scale * enc) @ params.head_w.T + params.head_b
    cache = {"a1_pre": a1_pre, "a1": a1, "a2_pre": a2_pre, "flat": flat,
             "enc": enc, "enc_cache": enc_cache, "logits": logits,
             "grid": (h, w), "cols1": cols1, "cols2": cols2}
    return softmax(logits, axis=1), cache


def backward_batch(params: ClassifierParams, images: np.ndarray, deltas: np.ndarray,
                   cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients for every parameter tensor given dL/dlogits."""
    grads: dict[str, np.ndarray] = {}
    grads["head_w"] = params.enc_scale * (dlogits.T @ cache["enc"])
    grads["head_b"] = dlogits.sum(axis=0)
    denc = params.enc_scale * (dlogits @ params.head_w)             # (B,K*Dd)
    dflat, dcode, dsmooth = encode_batch_backward(
        cache["flat"], params.codebook(), deltas, cache["enc_cache"], denc)
    grads["codewords"] = dcode
    grads["smoothing"] = dsmooth

    B, M, Dd = dflat.shape
    h, w = cache["grid"]
    dflat = dflat / params.desc_std
    dfields = dflat.transpose(0, 2, 1).reshape(B, Dd, h, w)
    da2 = relu_backward(cache["a2_pre"], dfields)
    da1, grads["conv2_w"], grads["conv2_b"] = conv2d_backward(
        cache["a1"], params.conv2_w, params.conv2_stride, da2, cols=cache["cols2"])
    da1_pre = relu_backward(cache["a1_pre"], da1)
    _, grads["conv1_w"], grads["conv1_b"] = conv2d_backward(
        images, params.conv1_w, 2, da1_pre, cols=cache["cols1"])
    return grads


def _filter_bank(n_filters: int, rng: np.random.Generator) -> np.ndarray:
    """First-layer init: four per-phase intensity taps plus rectified
    Laplacian / derivative pairs on the phase mean. Texture energy is then
    available from epoch 0 instead of depending on a lucky random init."""
    avg = np.full((3, 3), 1.0 / 9.0)
    lap = np.array([[0, -1, 0], [-1, 4.0, -1], [0, -1, 0]]) / 4.0
    dx = np.array([[0, 0, 0], [-1, 0, 1.0], [0, 0, 0]]) / 2.0
    bank = np.zeros((max(n_filters, 8), 5, 3, 3))
    for phase in range(4):
        bank[phase, phase] = avg
    for i, k2d in enumerate((lap, -lap, dx, -dx)):
        bank[4 + i, :4] = k2d / 4.0
    if n_filters > 8:
        bank[8:] = rng.standard_normal((n_filters - 8, 5, 3, 3)) * np.sqrt(2.0 / 45)
    # zero-sum noise per kernel: breaks symmetry without a DC leak that
    # would couple raw intensity into the band-pass energy channels
    noise = rng.standard_normal(bank.shape) * 0.01
    bank += noise - noise.mean(axis=(-2, -1), keepdims=True)
    return bank[:n_filters].astype(np.float32)


def _mixer_bank(n_out: int, n_in: int, rng: np.random.Generator) -> np.ndarray:
    """Second-layer init: identity center taps and 3x3 averages of each
    input channel, so first-layer texture energies reach the descriptors
    unmixed; SGD refines from there."""
    bank = np.zeros((max(n_out, 2 * n_in), n_in, 3, 3))
    for c in range(n_in):
        bank[c, c, 1, 1] = 1.0
        bank[n_in + c, c] = 1.0 / 9.0
    extra = 2 * n_in
    if n_out > extra:
        bank[extra:n_out] = rng.standard_normal(
            (n_out - extra, n_in, 3, 3)) * np.sqrt(2.0 / (n_in * 9))
    noise = rng.standard_normal(bank.shape) * 0.01
    bank += noise - noise.mean(axis=(-2, -1), keepdims=True)
    return bank[:n_out].astype(np.float32)


def init_params(samples: list[Sample], classes, cfg: Config, mode: str,
                rng: np.random.Generator) -> ClassifierParams:
    """Structured conv filter banks plus a data-seeded codebook from a
    warm-up pass over the gated descriptor pool."""
    c1, dd = cfg.conv_channels[0], cfg.descriptor_dim
    conv1_w = _filter_bank(c1, rng)
    conv1_b = np.zeros(c1, np.float32)
    conv2_w = _mixer_bank(dd, c1, rng)
    conv2_b = np.zeros(dd, np.float32)

    warm = samples[:min(32, len(samples))]
    images = np.stack([s.image for s in warm])
    a1 = relu_forward(conv2d_forward(images, conv1_w, conv1_b, stride=2))
    fields = relu_forward(conv2d_forward(a1, conv2_w, conv2_b,
                                         stride=cfg.conv2_stride))
    B, _, gh, gw = fields.shape
    flat = fields.reshape(B, dd, gh * gw).transpose(0, 2, 1).reshape(-1, dd)
    # statistics and codewords come from gated cells only: the aggregation
    # mask decides what the encoding ever sees, so seeding codewords on
    # background or padding would leave the lesion manifold unpartitioned
    active = np.concatenate([s.delta for s in warm]) > 0
    pool = flat[active] if active.any() else flat
    desc_mean = pool.mean(axis=0).astype(np.float32)
    desc_std = np.maximum(pool.std(axis=0), 1e-3).astype(np.float32)
    # codewords seed deterministically on the data manifold: the
    # descriptor nearest the centroid, then greedy farthest-point picks.
    # The smoothing factors start at 1/median distance^2 so the initial
    # soft assignment is neither uniform nor winner-take-all.
    desc = (pool - desc_mean) / desc_std
    sub = desc[::max(1, desc.shape[0] // 2048)]
    K = cfg.codebook_size
    if sub.shape[0] < K + 1:
        sub = np.concatenate([sub, rng.standard_normal((K + 1, dd))])
    centroid = sub.mean(axis=0)
    chosen = [int(np.argmin(((sub - centroid) ** 2).sum(1)))]
    min_d = ((sub - sub[chosen[0]]) ** 2).sum(1)
    while len(chosen) < K:
        nxt = int(np.argmax(min_d))
        chosen.append(nxt)
        min_d = np.minimum(min_d, ((sub - sub[nxt]) ** 2).sum(1))
    codewords = (sub[chosen] + 0.02 * rng.standard_normal((K, dd))).astype(np.float32)
    d2 = ((sub[:512, None, :] - codewords[None, :, :]) ** 2).sum(-1)
    smoothing = np.full(K, 1.0 / max(float(np.median(d2)), 1e-3), np.float32)
    head_w = np.zeros((len(classes), K * dd), np.float32)
    head_b = np.zeros(len(classes), np.float32)
    return ClassifierParams(conv1_w, conv1_b, conv2_w, conv2_b, codewords,
                            smoothing, head_w, head_b, desc_mean, desc_std,
                            tuple(classes), mode, enc_scale=cfg.encoding_scale,
                            conv2_stride=cfg.conv2_stride)


def orient(image: np.ndarray, delta_grid: np.ndarray, k: int):
    """Apply one of 8 deterministic orientations (4 rotations x flip)."""
    rot = k % 4
    img = np.rot90(image, rot, axes=(1, 2))
    d = np.rot90(delta_grid, rot)
    if k >= 4:
        img = img[:, :, ::-1]
        d = d[:, ::-1]
    return np.ascontiguousarray(img), np.ascontiguousarray(d)


def train_classifier(samples: list[Sample], classes, cfg: Config, mode: str,
                     log=None) -> tuple[ClassifierParams, list[float]]:
    """Plain SGD at cfg.learning_rate; deterministic given cfg.seed.

    Two phases: cfg.epochs of joint updates (conv stack, codewords,
    smoothing, head), then cfg.head_epochs of head-only refinement on the
    frozen representation. The linear head needs far more steps at this
    learning rate than the representation tolerates, so the refinement
    runs on encodings cached once after the joint phase (mathematically
    identical, orders of magnitude cheaper). Orientation augmentation
    (rot90/flip) draws from the same seeded stream during the joint
    phase. Returns the parameters and the per-epoch loss history."""
    if not samples:
        raise ValueError("empty training set")
    classes = tuple(classes)
    present = {s.label for s in samples}
    for c in classes:
        if c not in present:
            warnings.warn(f"class {c!r} has no training samples", stacklevel=2)

    # the init stream is intentionally seed-independent: initialization is
    # a deterministic function of the data, while cfg.seed varies the
    # shuffle/augmentation stream (the diversity source for ensembling)
    init_rng = np.random.default_rng(np.random.SeedSequence(entropy=0xC1A5))
    params = init_params(samples, classes, cfg, mode, init_rng)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 0xC1A5)))
    if set(classes) == set(CLASS_NAMES):
        weights = class_weight_vector(classes, cfg.class_weights)
    else:
        # binary (ksf) mode: inverse-frequency weights against skewed
        # true/false-positive ratios from harvesting
        counts = np.array([max(1, sum(1 for s in samples if s.label == c))
                           for c in classes], dtype=float)
        weights = len(samples) / (len(classes) * counts)
    weights = weights.astype(np.float32)
    labels = np.array([classes.index(s.label) for s in samples])
    images = np.stack([s.image for s in samples]).astype(np.float32)
    deltas = np.stack([s.delta for s in samples]).astype(np.float32)

    grid = descriptor_grid(images.shape[-1], cfg.conv2_stride)
    lr = np.float32(cfg.learning_rate)
    history = []
    n = len(samples)
    n_orient = 8 if cfg.train_augment else 1

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            ks = rng.integers(0, n_orient, len(idx)) if cfg.train_augment else \
                np.zeros(len(idx), int)
            x = images[idx].copy()
            d = deltas[idx].copy()
            for j, k in enumerate(ks):
                if k:
                    xi, di = orient(x[j], d[j].reshape(grid), int(k))
                    x[j] = xi
                    d[j] = di.reshape(-1)
            _, cache = forward_batch(params, x, d)
            loss, dlogits = focal_loss_from_logits(cache["logits"], labels[idx],
                                                   weights, cfg.gamma_focal)
            grads = backward_batch(params, x, d, cache, dlogits)
            for name, g in grads.items():
                arr = getattr(params, name)
                arr -= lr * g.astype(arr.dtype)
            total += loss * len(idx)
        history.append(total / n)
        if log:
            log(f"{mode} joint epoch {epoch + 1}/{cfg.epochs} loss {history[-1]:.4f}")

    # head-only refinement on the now-frozen representation; the head needs
    # far more steps at this learning rate than the representation
    # tolerates, so it trains on encodings cached once after the joint phase
    if cfg.head_epochs > 0:
        enc_dim = params.head_w.shape[1]
        enc_cache = np.zeros((n, enc_dim), np.float32)
        for start in range(0, n, cfg.batch_size):
            sl = slice(start, min(start + cfg.batch_size, n))
            _, cache = forward_batch(params, images[sl], deltas[sl])
            enc_cache[sl] = cache["enc"]
        for epoch in range(cfg.head_epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                enc = enc_cache[idx]
                logits = (params.enc_scale * enc) @ params.head_w.T + params.head_b
                loss, dlogits = focal_loss_from_logits(logits, labels[idx], weights,
                                                       cfg.gamma_focal)
                params.head_w -= lr * (params.enc_scale
                                       * (dlogits.T @ enc)).astype(np.float32)
                params.head_b -= lr * dlogits.sum(axis=0).astype(np.float32)
                total += loss * len(idx)
            history.append(total / n)
            if log and (epoch + 1) % 100 == 0:
                log(f"{mode} head epoch {epoch + 1}/{cfg.head_epochs} "
                    f"loss {history[-1]:.4f}")
    return params, history


def predict_probs(params: ClassifierParams, samples: list[Sample]) -> np.ndarray:
    images = np.stack([s.image for s in samples]).astype(np.float32)
    deltas = np.stack([s.delta for s in samples]).astype(np.float32)
    probs, _ = forward_batch(params, images, deltas)
    return probs


def majority_vote(pred_ids: list[int], probs: list[np.ndarray]) -> int:
    """Modal class over models; ties break on the highest mean probability
    among the tied classes."""
    if not pred_ids:
        raise ValueError("majority_vote needs at least one model")
    counts = np.bincount(pred_ids, minlength=len(probs[0]))
    top = counts.max()
    tied = np.flatnonzero(counts == top)
    if len(tied) == 1:
        return int(tied[0])
    mean_probs = np.mean(probs, axis=0)
    return int(tied[np.argmax(mean_probs[tied])])


def normalize_hu(plane: np.ndarray) -> np.ndarray:
    return ((plane - HU_CENTER) / HU_SCALE).astype(np.float32)


def _box_rect_mask(shape: tuple[int, int], rect) -> np.ndarray:
    x0, y0, x1, y1 = rect
    m = np.zeros(shape, np.float32)
    x0, y0 = max(0, x0), max(0, y0)
    x1, y1 = min(shape[1], x1), min(shape[0], y1)
    if x1 > x0 and y1 > y0:
        m[y0:y1, x0:x1] = 1.0   # rows are y
    return m


def sample_from_key_slice(key_slice, label: str, mode: str, cfg: Config) -> Sample:
    """Build a classifier input from a selected key slice.

    sadt: native-resolution canvas, mask channel + aggregation gate from
    the configured delta source. deepten: the bbox region resized to a
    fixed square, mask channel and gate identically 1.
    """
    if cfg.delta_source == "mask" and key_slice.roi_mask.any():
        region = key_slice.roi_mask.astype(np.float32)
    else:
        region = _box_rect_mask(key_slice.roi_mask.shape, key_slice.box_rect)

    if mode in ("sadt", "ksf"):
        chans = [normalize_hu(key_slice.roi_images[p]) for p in
                 ("NC", "A", "V", "D")]
        chans.append(region)
        image = np.stack(chans)
        grid = descriptor_grid(cfg.canvas_size, cfg.conv2_stride)
        delta = downsample_mask(region, grid).delta
        if not delta.any():
            # degenerate small masks: gate on the box footprint instead
            box_region = _box_rect_mask(key_slice.roi_mask.shape, key_slice.box_rect)
            delta = downsample_mask(box_region, grid).delta
        if not delta.any():
            delta = np.ones(grid[0] * grid[1])
    elif mode == "deepten":
        x0, y0, x1, y1 = key_slice.box_rect
        h, w = key_slice.roi_mask.shape
        x0, y0 = max(0, x0), max(0, y0)
        x1, y1 = max(x0 + 1, min(w, x1)), max(y0 + 1, min(h, y1))
        size = cfg.deepten_size
        chans = [bilinear_resize(normalize_hu(key_slice.roi_images[p][y0:y1, x0:x1]),
                                 size, size)
                 for p in ("NC", "A", "V", "D")]
        chans.append(np.ones((size, size), np.float32))
        image = np.stack(chans).astype(np.float32)
        gh, gw = descriptor_grid(size, cfg.conv2_stride)
        delta = np.ones(gh * gw)
    else:
        raise ValueError(f"unknown classifier mode {mode!r}")
    return Sample(image=image.astype(np.float32), delta=delta.astype(np.float32),
                  label=label)


def raw_patch_descriptors(image: np.ndarray, block: int = 4) -> np.ndarray:
    """Ablation descriptor mode: per-block channel means and stds, no conv."""
    C, H, W = image.shape
    hb, wb = H // block, W // block
    img = image[:, :hb * block, :wb * block]
    blocks = img.reshape(C, hb, block, wb, block)
    means = blocks.mean(axis=(2, 4))
    stds = blocks.std(axis=(2, 4))
    return np.concatenate([means, stds], axis=0).reshape(2 * C, hb * wb).T


def save_classifier(path: str, params: ClassifierParams, cfg: Config) -> None:
    meta = {"kind": "classifier", "mode": params.mode,
            "classes": list(params.classes),
            "codebook_size": cfg.codebook_size,
            "descriptor_dim": cfg.descriptor_dim,
            "encoding_scale": params.enc_scale,
            "conv2_stride": params.conv2_stride}
    formats.save_checkpoint(path, params.tensors(), meta)


def load_classifier(path: str) -> ClassifierParams:
    tensors, meta = formats.load_checkpoint(path)
    if meta.get("kind") != "classifier":
        raise ValueError(f"{path} is not a classifier checkpoint")
    return ClassifierParams(classes=tuple(meta["classes"]), mode=meta["mode"],
                            enc_scale=float(meta.get("encoding_scale", 1.0)),
                            conv2_stride=int(meta.get("conv2_stride", 2)),
                            **tensors)
