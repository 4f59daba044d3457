"""Masked residual texture encoding with a learnable codebook.

Each spatial descriptor f_i is compared against K learnable codewords c_k
through residuals r_ik = f_i - c_k. Soft assignment weights come from a
softmax over negative scaled squared distances,

    a_ik = exp(-s_k ||r_ik||^2) / sum_j exp(-s_j ||r_ij||^2),

with one learnable smoothing factor s_k per codeword. Aggregation is
spatially gated by a binary mask delta so that only descriptors inside the
region of interest contribute:

    e_k = sum_i a_ik * r_ik * delta_i.

The K x D matrix of aggregated residuals is flattened and l2-normalized
(all-zero vectors pass through unchanged). delta is a constant with no
gradient; gradients for masked-out descriptors are exactly zero because
every path from f_i to the output is gated by delta_i.

Both a reference implementation (materialized residual tensors, used by
the tests and the gradient checker) and a batched GEMM implementation
(used by training) are provided; they agree to float tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import softmax

NORM_EPS = 1e-12


@dataclass
class Codebook:
    codewords: np.ndarray   # (K, D)
    smoothing: np.ndarray   # (K,)

    def __post_init__(self):
        self.codewords = np.asarray(self.codewords)
        self.smoothing = np.asarray(self.smoothing)
        if self.codewords.ndim != 2 or self.codewords.shape[0] < 1:
            raise ValueError(f"codewords must be (K,D) with K >= 1, got {self.codewords.shape}")
        if self.smoothing.shape != (self.codewords.shape[0],):
            raise ValueError(
                f"smoothing shape {self.smoothing.shape} does not match K={self.codewords.shape[0]}")
        if not np.all(np.isfinite(self.smoothing)):
            raise ValueError("smoothing factors must be finite")


@dataclass
class DescriptorField:
    descriptors: np.ndarray          # (M, D)
    grid_shape: tuple[int, int]      # (h, w) with h*w == M

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors)
        if self.descriptors.ndim != 2 or self.descriptors.shape[0] < 1:
            raise ValueError(f"descriptors must be (M,D) with M >= 1, got {self.descriptors.shape}")
        h, w = self.grid_shape
        if h * w != self.descriptors.shape[0]:
            raise ValueError(
                f"grid {self.grid_shape} has {h * w} cells but there are "
                f"{self.descriptors.shape[0]} descriptors")


@dataclass
class AggregationMask:
    delta: np.ndarray                # (M,) of {0,1}

    def __post_init__(self):
        self.delta = np.asarray(self.delta)
        vals = np.unique(self.delta)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError(f"mask must be binary, found values {vals[:8]}")


@dataclass
class EncodingIntermediates:
    residuals: np.ndarray            # (M, K, D)
    assignments: np.ndarray          # (M, K), rows sum to 1


@dataclass
class Encoding:
    per_codeword: np.ndarray         # (K, D)
    flattened_normalized: np.ndarray  # (K*D,), unit norm or exactly zero


def _check_pair(field: DescriptorField, book: Codebook):
    if field.descriptors.shape[1] != book.codewords.shape[1]:
        raise ValueError(
            f"descriptor dim {field.descriptors.shape[1]} does not match "
            f"codeword dim {book.codewords.shape[1]}")
    if not np.all(np.isfinite(field.descriptors)):
        raise ValueError("descriptors contain non-finite values")


def soft_assign(field: DescriptorField, book: Codebook) -> EncodingIntermediates:
    """Residuals and softmax assignment weights (max-subtracted for stability)."""
    _check_pair(field, book)
    r = field.descriptors[:, None, :] - book.codewords[None, :, :]   # (M,K,D)
    d2 = np.einsum("mkd,mkd->mk", r, r)
    a = softmax(-book.smoothing[None, :] * d2, axis=1)
    return EncodingIntermediates(residuals=r, assignments=a)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < NORM_EPS:
        return np.zeros_like(v)
    return v / n


def encode_forward(field: DescriptorField, book: Codebook,
                   mask: AggregationMask) -> tuple[Encoding, EncodingIntermediates]:
    inter = soft_assign(field, book)
    delta = mask.delta
    if delta.shape != (field.descriptors.shape[0],):
        raise ValueError(
            f"mask length {delta.shape} does not match M={field.descriptors.shape[0]}")
    w = inter.assignments * delta[:, None]                  # (M,K)
    e = np.einsum("mk,mkd->kd", w, inter.residuals)         # (K,D)
    flat = e.reshape(-1)
    return Encoding(per_codeword=e, flattened_normalized=l2_normalize(flat)), inter


def encode_backward(field: DescriptorField, book: Codebook, mask: AggregationMask,
                    inter: EncodingIntermediates, upstream: np.ndarray):
    """Analytic gradients of the normalized encoding w.r.t. descriptors,
    codewords, and smoothing factors.

    ``upstream`` is dL/d(flattened_normalized), length K*D.
    Returns (d_descriptors (M,D), d_codewords (K,D), d_smoothing (K,)).
    """
    if inter is None:
        raise ValueError("forward intermediates are required for the backward pass")
    f = field.descriptors
    c = book.codewords
    s = book.smoothing
    delta = mask.delta
    M, K = inter.assignments.shape
    D = f.shape[1]
    g = np.asarray(upstream).reshape(K * D)

    # back through l2 normalization: y = v/||v||, dv = (g - y (y.g)) / ||v||
    w = inter.assignments * delta[:, None]
    e = np.einsum("mk,mkd->kd", w, inter.residuals)
    v = e.reshape(-1)
    n = np.linalg.norm(v)
    if n < NORM_EPS:
        dE = np.zeros((K, D), dtype=f.dtype)
    else:
        y = v / n
        dE = ((g - y * (y @ g)) / n).reshape(K, D)

    a = inter.assignments
    r = inter.residuals
    # e_k = sum_i a_ik delta_i r_ik
    da = delta[:, None] * np.einsum("kd,mkd->mk", dE, r)     # (M,K)
    dr = (a * delta[:, None])[:, :, None] * dE[None, :, :]   # direct path, (M,K,D)

    # softmax over k with logits l_ik = -s_k ||r_ik||^2
    dl = a * (da - (da * a).sum(axis=1, keepdims=True))
    d2 = np.einsum("mkd,mkd->mk", r, r)
    ds = -(d2 * dl).sum(axis=0)
    dd2 = -dl * s[None, :]
    dr += 2.0 * dd2[:, :, None] * r

    d_descriptors = dr.sum(axis=1)
    d_codewords = -dr.sum(axis=0)
    return d_descriptors, d_codewords, ds


def encode_batch_forward(fields: np.ndarray, book: Codebook, deltas: np.ndarray):
    """GEMM-form batched encoding used by training.

    fields: (B,M,D); deltas: (B,M). Returns (normalized (B,K*D), cache).
    Avoids materializing (B,M,K,D) residual tensors.
    """
    C = book.codewords
    s = book.smoothing
    f2 = np.einsum("bmd,bmd->bm", fields, fields)
    c2 = np.einsum("kd,kd->k", C, C)
    fc = fields @ C.T                                        # (B,M,K)
    d2 = f2[:, :, None] - 2.0 * fc + c2[None, None, :]
    a = softmax(-s[None, None, :] * d2, axis=2)
    w = a * deltas[:, :, None]
    colsum = w.sum(axis=1)                                   # (B,K)
    e = np.matmul(w.transpose(0, 2, 1), fields) - colsum[:, :, None] * C[None, :, :]
    B, K, D = e.shape
    v = e.reshape(B, K * D)
    n = np.linalg.norm(v, axis=1)
    safe = np.where(n < NORM_EPS, 1.0, n)
    y = np.where((n < NORM_EPS)[:, None], 0.0, v / safe[:, None])
    cache = {"a": a, "w": w, "colsum": colsum, "d2": d2, "v": v, "n": n}
    return y, cache


def encode_batch_backward(fields: np.ndarray, book: Codebook, deltas: np.ndarray,
                          cache: dict, upstream: np.ndarray):
    """Backward companion of encode_batch_forward.

    upstream: (B,K*D). Returns (d_fields (B,M,D), d_codewords, d_smoothing).
    """
    C = book.codewords
    s = book.smoothing
    a, w, colsum = cache["a"], cache["w"], cache["colsum"]
    d2, v, n = cache["d2"], cache["v"], cache["n"]
    B, M, D = fields.shape
    K = C.shape[0]
    g = upstream.reshape(B, K * D)

    safe = np.where(n < NORM_EPS, 1.0, n)
    y = np.where((n < NORM_EPS)[:, None], 0.0, v / safe[:, None])
    dv = (g - y * np.einsum("bi,bi->b", y, g)[:, None]) / safe[:, None]
    dv = np.where((n < NORM_EPS)[:, None], 0.0, dv)
    dE = dv.reshape(B, K, D)

    # e = w^T F - colsum(w) C
    d_fields = np.matmul(w, dE)                              # (B,M,D)
    d_code = -np.einsum("bk,bkd->kd", colsum, dE)
    q = np.einsum("bkd,kd->bk", dE, C)                       # from colsum term
    dw = np.matmul(fields, dE.transpose(0, 2, 1)) - q[:, None, :]
    da = dw * deltas[:, :, None]

    dl = a * (da - (da * a).sum(axis=2, keepdims=True))
    d_smooth = -np.einsum("bmk,bmk->k", d2, dl)
    dd2 = -dl * s[None, None, :]
    # d2 = |f|^2 - 2 f.c + |c|^2
    d_fields += 2.0 * dd2.sum(axis=2)[:, :, None] * fields - 2.0 * np.matmul(dd2, C)
    d_code += 2.0 * np.einsum("bmk->k", dd2)[:, None] * C \
        - 2.0 * np.einsum("bmk,bmd->kd", dd2, fields)
    return d_fields, d_code, d_smooth


def downsample_mask(pixel_mask: np.ndarray, grid_shape: tuple[int, int]) -> AggregationMask:
    """Map a full-resolution binary mask onto the descriptor grid.

    A grid cell is 1 iff at least half of the pixels falling into its
    receptive window (pixel row r -> cell floor(r*h/H)) are 1. An all-zero
    result is legal.
    """
    pm = np.asarray(pixel_mask)
    if pm.ndim != 2:
        raise ValueError(f"pixel mask must be 2D, got shape {pm.shape}")
    H, W = pm.shape
    h, w = grid_shape
    rows = (np.arange(H) * h) // H
    cols = (np.arange(W) * w) // W
    cell = rows[:, None] * w + cols[None, :]
    ones = np.bincount(cell.reshape(-1), weights=pm.reshape(-1).astype(float),
                       minlength=h * w)
    total = np.maximum(np.bincount(cell.reshape(-1), minlength=h * w), 1)
    delta = (ones / total >= 0.5).astype(np.float64)
    return AggregationMask(delta=delta)
