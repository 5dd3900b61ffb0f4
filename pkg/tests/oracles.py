"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (nested loops, scatter-accumulate,
histogram entropy) and shares no code with the package implementation.
"""

import numpy as np


def conv2d_loops(x, w, b, stride, padding):
    """Six-nested-loop cross-correlation; weight (C_out, C_in, ks, ks)."""
    n, cin, h, wd = x.shape
    cout, _, ks, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - ks) // stride + 1
    wo = (wd + 2 * padding - ks) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for ni in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for u in range(ks):
                            for v in range(ks):
                                acc += xp[ni, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[ni, o, i, j] = acc
    return out


def deconv2d_scatter(x, w, b, stride, padding):
    """Scatter-accumulate transposed convolution; weight (C_in, C_out, ks, ks)."""
    n, cin, h, wd = x.shape
    _, cout, ks, _ = w.shape
    oh = (h - 1) * stride - 2 * padding + ks
    ow = (wd - 1) * stride - 2 * padding + ks
    full = np.zeros((n, cout, oh + 2 * padding, ow + 2 * padding))
    for ni in range(n):
        for c in range(cin):
            for i in range(h):
                for j in range(wd):
                    for o in range(cout):
                        for u in range(ks):
                            for v in range(ks):
                                full[ni, o, i * stride + u, j * stride + v] += x[ni, c, i, j] * w[c, o, u, v]
    out = full[:, :, padding:padding + oh, padding:padding + ow]
    return out + b[None, :, None, None]


def pixel_shuffle_loops(x, alpha):
    """Definition of the rearrangement: channel block c*a^2 + di*a + dj."""
    n, c, h, w = x.shape
    co = c // (alpha * alpha)
    out = np.zeros((n, co, h * alpha, w * alpha))
    for ni in range(n):
        for co_i in range(co):
            for i in range(h):
                for j in range(w):
                    for di in range(alpha):
                        for dj in range(alpha):
                            out[ni, co_i, i * alpha + di, j * alpha + dj] = \
                                x[ni, co_i * alpha * alpha + di * alpha + dj, i, j]
    return out


def pixel_unshuffle_loops(x, alpha):
    n, c, h, w = x.shape
    hi, wi = h // alpha, w // alpha
    out = np.zeros((n, c * alpha * alpha, hi, wi))
    for ni in range(n):
        for ci in range(c):
            for i in range(hi):
                for j in range(wi):
                    for di in range(alpha):
                        for dj in range(alpha):
                            out[ni, ci * alpha * alpha + di * alpha + dj, i, j] = \
                                x[ni, ci, i * alpha + di, j * alpha + dj]
    return out


def central_diff(f, x, step=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = f(x)
        flat[k] = orig - step
        fm = f(x)
        flat[k] = orig
        gf[k] = (fp - fm) / (2 * step)
    return g


def rel_err(a, b):
    """Scale-relative max deviation: max|a-b| / max(max|a|, max|b|, tiny)."""
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / denom)


def grad_close(analytic, numeric, rtol):
    """Relative comparison with an absolute guard for near-zero entries."""
    denom = np.maximum(np.abs(numeric), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom)) <= rtol


def channel_mix_loops(x, r):
    n, c, h, w = x.shape
    co = r.shape[0]
    out = np.zeros((n, co, h, w))
    for j in range(co):
        for ci in range(c):
            out[:, j] += r[j, ci] * x[:, ci]
    return out
