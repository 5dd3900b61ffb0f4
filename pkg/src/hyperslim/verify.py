"""Randomized merge-equivalence verification (the merge-verify command).

For each merge rule, draws random host weights, compactor matrices and
inputs, and compares host-then-compactor against the merged layer. The
reported number is the scale-relative max deviation over all instances.
"""

from __future__ import annotations

import numpy as np

from .compactor import merge_conv, merge_deconv, merge_pixelshuffle
from .tensor import ConvWeights, Tensor, conv2d_raw, deconv2d_raw, pixel_shuffle_raw

MERGE_TOLERANCE = 1e-9


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / denom)


def _mix(x: np.ndarray, r: np.ndarray) -> np.ndarray:
    return np.einsum("oc,nchw->nohw", r, x)


def verify_merge_conv(rng: np.random.Generator, instances: int = 100) -> float:
    worst = 0.0
    for _ in range(instances):
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 6))
        keep = int(rng.integers(1, cout + 1))
        ks = int(rng.choice([1, 3, 5]))
        stride = int(rng.choice([1, 2]))
        pad = int(rng.integers(0, 3))
        w = ConvWeights(Tensor(rng.normal(size=(cout, cin, ks, ks))),
                        Tensor(rng.normal(size=cout)), "conv", stride, pad)
        rp = rng.normal(size=(keep, cout))
        x = rng.normal(size=(2, cin, 8, 8))
        host = conv2d_raw(x, w.weight.data, w.bias.data, stride, pad)
        m = merge_conv(w, rp)
        merged = conv2d_raw(x, m.weight.data, m.bias.data, stride, pad)
        worst = max(worst, _rel(merged, _mix(host, rp)))
    return worst


def verify_merge_pixelshuffle(rng: np.random.Generator, instances: int = 100) -> float:
    worst = 0.0
    for _ in range(instances):
        alpha = int(rng.choice([2, 3]))
        cin = int(rng.integers(1, 4))
        c = int(rng.integers(1, 5))
        keep = int(rng.integers(1, c + 1))
        ks = int(rng.choice([1, 3]))
        pad = ks // 2
        w = ConvWeights(Tensor(rng.normal(size=(alpha * alpha * c, cin, ks, ks))),
                        Tensor(rng.normal(size=alpha * alpha * c)), "conv", 1, pad)
        rp = rng.normal(size=(keep, c))
        x = rng.normal(size=(1, cin, 4, 4))
        host = pixel_shuffle_raw(conv2d_raw(x, w.weight.data, w.bias.data, 1, pad), alpha)
        m = merge_pixelshuffle(w, rp, alpha)
        merged = pixel_shuffle_raw(
            conv2d_raw(x, m.weight.data, m.bias.data, 1, pad), alpha)
        worst = max(worst, _rel(merged, _mix(host, rp)))
    return worst


def verify_merge_deconv(rng: np.random.Generator, instances: int = 100) -> float:
    worst = 0.0
    for _ in range(instances):
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 6))
        keep = int(rng.integers(1, cout + 1))
        ks = int(rng.choice([2, 4, 5]))
        stride = int(rng.choice([1, 2]))
        pad = int(rng.integers(0, min(ks, 2)))
        w = ConvWeights(Tensor(rng.normal(size=(cin, cout, ks, ks))),
                        Tensor(rng.normal(size=cout)), "deconv", stride, pad)
        rp = rng.normal(size=(keep, cout))
        x = rng.normal(size=(2, cin, 5, 5))
        host = deconv2d_raw(x, w.weight.data, w.bias.data, stride, pad)
        m = merge_deconv(w, rp)
        merged = deconv2d_raw(x, m.weight.data, m.bias.data, stride, pad)
        worst = max(worst, _rel(merged, _mix(host, rp)))
    return worst


def merge_verify(seed: int = 0, instances: int = 100) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    return {
        "merge_conv": verify_merge_conv(rng, instances),
        "merge_pixelshuffle": verify_merge_pixelshuffle(rng, instances),
        "merge_deconv": verify_merge_deconv(rng, instances),
    }
