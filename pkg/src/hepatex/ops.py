"""Dense-array primitives with hand-written backward passes.

All tensors are plain numpy arrays, row-major with the last axis fastest.
Convolution uses the cross-correlation convention (no kernel flip) with
zero padding of (k-1)/2, so ``out = ceil(in / stride)`` per spatial axis.
Training runs in float32; gradient verification always runs in float64
because central differences are unreliable in single precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (C,H,W) or (B,C,H,W) input, got shape {tuple(x.shape)}")


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray,
                   stride: int = 1) -> np.ndarray:
    """Cross-correlate ``x`` with ``kernels``.

    x:       (C,H,W) or (B,C,H,W)
    kernels: (F,C,k,k), k odd
    bias:    (F,)
    returns: (F,H',W') or (B,F,H',W') with H' = ceil(H/stride)
    """
    out, _ = _conv2d_forward_cols(x, kernels, bias, stride)
    return out


def _conv2d_forward_cols(x, kernels, bias, stride):
    xb, squeeze = _as_batched(x)
    B, C, H, W = xb.shape
    F, Ck, kh, kw = kernels.shape
    if kh != kw or kh % 2 != 1:
        raise ValueError(f"kernel must be square with odd size, got {kh}x{kw}")
    if Ck != C:
        raise ValueError(
            f"channel mismatch: input shape {tuple(x.shape)} vs kernels shape {tuple(kernels.shape)}")
    if bias.shape != (F,):
        raise ValueError(f"bias shape {tuple(bias.shape)} does not match {F} filters")
    if H < kh or W < kw:
        raise ValueError(f"input {H}x{W} smaller than kernel {kh}x{kw}")

    p = (kh - 1) // 2
    Ho = -(-H // stride)
    Wo = -(-W // stride)
    xp = np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p)))
    sB, sC, sH, sW = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, C, kh, kw, Ho, Wo),
        strides=(sB, sC, sH, sW, stride * sH, stride * sW),
        writeable=False,
    )
    cols = np.ascontiguousarray(patches.reshape(B, C * kh * kw, Ho * Wo))
    out = np.matmul(kernels.reshape(F, -1), cols)          # (B,F,Ho*Wo)
    out = out.reshape(B, F, Ho, Wo) + bias[None, :, None, None]
    if squeeze:
        out = out[0]
    return out, cols


def conv2d_backward(x: np.ndarray, kernels: np.ndarray, stride: int,
                    upstream: np.ndarray,
                    cols: np.ndarray | None = None):
    """Gradients of conv2d_forward w.r.t. input, kernels, and bias.

    ``cols`` is the im2col buffer from the forward pass; it is recomputed
    when not supplied.
    """
    xb, squeeze = _as_batched(x)
    up, _ = _as_batched(upstream)
    B, C, H, W = xb.shape
    F, _, kh, kw = kernels.shape
    p = (kh - 1) // 2
    Ho, Wo = up.shape[2], up.shape[3]
    if cols is None:
        _, cols = _conv2d_forward_cols(xb, kernels, np.zeros(F, xb.dtype), stride)

    go = up.reshape(B, F, Ho * Wo)
    d_bias = go.sum(axis=(0, 2))
    d_kern = np.tensordot(go, cols, axes=([0, 2], [0, 2])).reshape(kernels.shape)

    # scatter grad columns back onto the padded input
    d_cols = np.matmul(kernels.reshape(F, -1).T, go)       # (B,C*kh*kw,Ho*Wo)
    d_cols = d_cols.reshape(B, C, kh, kw, Ho, Wo)
    d_xp = np.zeros((B, C, H + 2 * p, W + 2 * p), dtype=up.dtype)
    for ki in range(kh):
        for kj in range(kw):
            d_xp[:, :, ki:ki + stride * Ho:stride,
                 kj:kj + stride * Wo:stride] += d_cols[:, :, ki, kj]
    d_x = d_xp[:, :, p:p + H, p:p + W]
    if squeeze:
        d_x = d_x[0]
    return d_x, d_kern, d_bias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(x > 0, upstream, 0)


def linear_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """x: (N,) or (B,N); weight: (C,N); bias: (C,)."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(
            f"shape mismatch: input {tuple(x.shape)} vs weight {tuple(weight.shape)}")
    return x @ weight.T + bias


def linear_backward(x: np.ndarray, weight: np.ndarray, upstream: np.ndarray):
    if x.ndim == 1:
        return upstream @ weight, np.outer(upstream, x), upstream.copy()
    return upstream @ weight, upstream.T @ x, upstream.sum(axis=0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a (H,W) or (C,H,W) image."""
    single = img.ndim == 2
    if single:
        img = img[None]
    C, H, W = img.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"degenerate target shape ({out_h},{out_w})")
    ys = np.arange(out_h) * ((H - 1) / (out_h - 1) if out_h > 1 else 0.0)
    xs = np.arange(out_w) * ((W - 1) / (out_w - 1) if out_w > 1 else 0.0)
    y0 = np.minimum(ys.astype(int), H - 2) if H > 1 else np.zeros(out_h, int)
    x0 = np.minimum(xs.astype(int), W - 2) if W > 1 else np.zeros(out_w, int)
    ty = (ys - y0)[None, :, None]
    tx = (xs - x0)[None, None, :]
    a = img[:, y0][:, :, x0] * (1 - ty) * (1 - tx)
    b = img[:, y0][:, :, np.minimum(x0 + 1, W - 1)] * (1 - ty) * tx
    c = img[:, np.minimum(y0 + 1, H - 1)][:, :, x0] * ty * (1 - tx)
    d = img[:, np.minimum(y0 + 1, H - 1)][:, :, np.minimum(x0 + 1, W - 1)] * ty * tx
    out = a + b + c + d
    return out[0] if single else out


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    num_params: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def gradcheck(fn, params: np.ndarray, h: float = 1e-5) -> GradCheckReport:
    """Compare an analytic gradient against 64-bit central differences.

    ``fn(params) -> (value, grad)`` where value is a finite scalar and grad
    has the same shape as params. The relative error denominator is
    max(|analytic|, |numeric|, 1e-8) per coordinate.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    theta = np.asarray(params, dtype=np.float64).copy()
    value, grad = fn(theta)
    if not np.isfinite(value):
        raise ValueError(f"forward value is not finite: {value}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape:
        raise ValueError(
            f"gradient shape {grad.shape} does not match params shape {theta.shape}")

    numeric = np.zeros_like(theta)
    flat = theta.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus, _ = fn(theta)
        flat[i] = orig - h
        f_minus, _ = fn(theta)
        flat[i] = orig
        num_flat[i] = (f_plus - f_minus) / (2.0 * h)

    abs_err = np.abs(grad - numeric)
    denom = np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), 1e-8)
    rel = abs_err / denom
    return GradCheckReport(
        max_rel_error=float(rel.max()) if rel.size else 0.0,
        max_abs_error=float(abs_err.max()) if abs_err.size else 0.0,
        num_params=int(theta.size),
    )
