"""Registry of every hand-written backward pass, each wrapped as a
scalar-valued closure for the central-difference checker.

The CLI ``gradcheck`` command iterates this registry; the acceptance
suite runs the same closures over 20 seeded instances each.
"""

from __future__ import annotations

import numpy as np

from . import classifier as clf
from .detection import (
    CenterSize,
    GaussianSpec,
    center_l1_grad,
    heatmap_focal_loss_grad,
    render_targets,
)
from .encoding import AggregationMask, Codebook, DescriptorField, encode_backward, encode_forward
from .ops import (
    conv2d_backward,
    conv2d_forward,
    gradcheck,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
)


def conv_kernel_check(seed: int):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 6, 6))
    k0 = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    w = rng.standard_normal((3, 3, 3))

    def fn(theta):
        k = theta.reshape(k0.shape)
        out = conv2d_forward(x, k, b, stride=2)
        _, dk, _ = conv2d_backward(x, k, 2, w)
        return float((out * w).sum()), dk.reshape(-1)

    return fn, k0.reshape(-1)


def conv_input_check(seed: int):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((2, 5, 5))
    k = rng.standard_normal((2, 2, 3, 3))
    b = rng.standard_normal(2)
    w = rng.standard_normal((2, 5, 5))

    def fn(theta):
        x = theta.reshape(x0.shape)
        out = conv2d_forward(x, k, b, stride=1)
        dx, _, _ = conv2d_backward(x, k, 1, w)
        return float((out * w).sum()), dx.reshape(-1)

    return fn, x0.reshape(-1)


def relu_check(seed: int):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(24)
    # keep values away from the kink so finite differences are valid
    x0 = np.where(np.abs(x0) < 0.05, 0.2, x0)
    w = rng.standard_normal(24)

    def fn(theta):
        return float((relu_forward(theta) * w).sum()), relu_backward(theta, w)

    return fn, x0


def linear_head_check(seed: int):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(7)
    w0 = rng.standard_normal((4, 7))
    b0 = rng.standard_normal(4)
    up = rng.standard_normal(4)

    def fn(theta):
        w = theta[:28].reshape(4, 7)
        b = theta[28:]
        out = linear_forward(x, w, b)
        _, dw, db = linear_backward(x, w, up)
        return float((out * up).sum()), np.concatenate([dw.reshape(-1), db])

    return fn, np.concatenate([w0.reshape(-1), b0])


def encoding_check(seed: int):
    rng = np.random.default_rng(seed)
    M, K, D = 6, 3, 4
    field0 = rng.standard_normal((M, D))
    book0 = rng.standard_normal((K, D))
    smooth0 = rng.standard_normal(K) * 0.5 + 1.0
    delta = (rng.random(M) < 0.7).astype(float)
    up = rng.standard_normal(K * D)
    mask = AggregationMask(delta)

    def fn(theta):
        f = theta[:M * D].reshape(M, D)
        c = theta[M * D:M * D + K * D].reshape(K, D)
        s = theta[M * D + K * D:]
        fld = DescriptorField(f, (1, M))
        bk = Codebook(c, s)
        enc, inter = encode_forward(fld, bk, mask)
        df, dc, ds = encode_backward(fld, bk, mask, inter, up)
        return float(enc.flattened_normalized @ up), np.concatenate(
            [df.reshape(-1), dc.reshape(-1), ds])

    theta0 = np.concatenate([field0.reshape(-1), book0.reshape(-1), smooth0])
    return fn, theta0


def focal_classification_check(seed: int):
    rng = np.random.default_rng(seed)
    logits0 = rng.standard_normal((3, 4))
    labels = rng.integers(0, 4, 3)
    weights = np.array([5.0, 1.0, 1.0, 2.0])

    def fn(theta):
        loss, grad = clf.focal_loss_from_logits(theta.reshape(3, 4), labels,
                                                weights, 2.0)
        return loss, grad.reshape(-1)

    return fn, logits0.reshape(-1)


def classifier_stack_check(seed: int):
    rng = np.random.default_rng(seed)
    params = clf.ClassifierParams(
        conv1_w=rng.standard_normal((2, 5, 3, 3)) * 0.4,
        conv1_b=rng.standard_normal(2) * 0.1,
        conv2_w=rng.standard_normal((3, 2, 3, 3)) * 0.4,
        conv2_b=rng.standard_normal(3) * 0.1,
        codewords=rng.standard_normal((2, 3)) * 0.5,
        smoothing=rng.standard_normal(2) * 0.3 + 1.0,
        head_w=rng.standard_normal((3, 6)) * 0.5,
        head_b=np.zeros(3),
        desc_mean=rng.standard_normal(3) * 0.2,
        desc_std=rng.uniform(0.5, 1.5, 3),
        classes=("a", "b", "c"), mode="sadt", enc_scale=1.0)
    images = rng.standard_normal((2, 5, 8, 8)) * 0.5
    deltas = (rng.random((2, 4)) < 0.8).astype(np.float64)
    labels = rng.integers(0, 3, 2)
    weights = np.array([1.5, 1.0, 2.0])
    names = ["conv1_w", "conv1_b", "conv2_w", "conv2_b",
             "codewords", "smoothing", "head_w", "head_b"]
    shapes = [getattr(params, n).shape for n in names]
    sizes = [int(np.prod(s)) for s in shapes]

    def fn(theta):
        off = 0
        for n, s, size in zip(names, shapes, sizes):
            setattr(params, n, theta[off:off + size].reshape(s).copy())
            off += size
        _, cache = clf.forward_batch(params, images, deltas)
        loss, dlogits = clf.focal_loss_from_logits(cache["logits"], labels,
                                                   weights, 2.0)
        grads = clf.backward_batch(params, images, deltas, cache, dlogits)
        return loss, np.concatenate([grads[n].reshape(-1) for n in names])

    theta0 = np.concatenate([getattr(params, n).reshape(-1) for n in names])
    return fn, theta0


def heatmap_focal_check(seed: int):
    rng = np.random.default_rng(seed)
    target = render_targets([CenterSize(rng.uniform(6, 9, 3), rng.uniform(3, 6, 3))],
                            (4, 4, 4), 4, GaussianSpec(1.0, (1, 1, 2)))
    pred0 = rng.uniform(0.05, 0.95, (4, 4, 4))

    def fn(theta):
        loss, grad = heatmap_focal_loss_grad(theta.reshape(4, 4, 4), target)
        return loss, grad.reshape(-1)

    return fn, pred0.reshape(-1)


def size_l1_check(seed: int):
    rng = np.random.default_rng(seed)
    target = render_targets([CenterSize(rng.uniform(6, 9, 3), rng.uniform(3, 6, 3))],
                            (4, 4, 4), 4, GaussianSpec(1.0, (1, 1, 2)))
    pred0 = target.sizes + rng.uniform(0.2, 2.0, target.sizes.shape)

    def fn(theta):
        loss, grad = center_l1_grad(theta.reshape(target.sizes.shape),
                                    target.sizes, target.center_mask)
        return loss, grad.reshape(-1)

    return fn, pred0.reshape(-1)


REGISTRY = {
    "conv2d_kernels": conv_kernel_check,
    "conv2d_input": conv_input_check,
    "relu": relu_check,
    "linear_head": linear_head_check,
    "texture_encoding": encoding_check,
    "weighted_focal": focal_classification_check,
    "classifier_stack": classifier_stack_check,
    "heatmap_focal": heatmap_focal_check,
    "size_l1": size_l1_check,
}

# the focal loss mixes O(1) values with coordinates whose gradients are
# ~1e-6; a larger step keeps central-difference roundoff below tolerance
STEP_OVERRIDES = {"heatmap_focal": 1e-5}


def run_all(n_seeds: int = 5, h: float = 1e-6, tol: float = 1e-4,
            plant_bug: str | None = None):
    """Run every registered check; returns (all_ok, per-check worst error)."""
    results = {}
    for name, builder in REGISTRY.items():
        worst = 0.0
        for seed in range(n_seeds):
            fn, theta = builder(seed)
            if name == plant_bug:
                orig = fn

                def fn(t, _orig=orig):
                    v, g = _orig(t)
                    return v, 2.0 * g
            report = gradcheck(fn, theta, h=STEP_OVERRIDES.get(name, h))
            worst = max(worst, report.max_rel_error)
        results[name] = worst
    return all(v < tol for v in results.values()), results
