"""Dense 4-D tensors with reverse-mode autodiff for the codec's layer set.

The engine is deliberately small: it supports exactly the operations the
hyperprior codec needs (convolution, transposed convolution, PixelShuffle,
pointwise activations, channel mixing, and the scalar reductions used by the
rate-distortion loss). Everything is float64; gradients are computed only for
branches that reach a parameter with ``requires_grad=True``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor/weight dimensions are incompatible."""


def _as_f64(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """A float64 array with an optional gradient buffer.

    Feature maps are 4-D ``(n, c, h, w)``; weights, biases, compactor
    matrices and scalar losses reuse the same type at their natural ranks.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse-mode pass seeding this node (defaults to ones)."""
        if grad is None:
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.accumulate(_as_f64(grad))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


@dataclass
class ConvWeights:
    """Weight bundle for a (de)convolution layer.

    layout "conv" stores ``(C_out, C_in, ks, ks)``; layout "deconv" stores
    ``(C_in, C_out, ks, ks)`` with input and output channels transposed.
    """

    weight: Tensor
    bias: Tensor
    layout: str = "conv"
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if not isinstance(self.weight, Tensor):
            self.weight = Tensor(self.weight)
        if not isinstance(self.bias, Tensor):
            self.bias = Tensor(self.bias)
        if self.layout not in ("conv", "deconv"):
            raise ValueError(f"unknown layout {self.layout!r}")
        w = self.weight.data
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeError(f"kernel must be square 4-D, got {w.shape}")
        if self.stride < 1:
            raise ValueError("stride must be positive")
        if self.padding < 0:
            raise ValueError("padding must be nonnegative")
        cout = w.shape[0] if self.layout == "conv" else w.shape[1]
        if self.bias.data.shape != (cout,):
            raise ShapeError(
                f"bias length {self.bias.data.shape} does not match C_out={cout}"
            )

    @property
    def in_channels(self) -> int:
        return self.weight.data.shape[1 if self.layout == "conv" else 0]

    @property
    def out_channels(self) -> int:
        return self.weight.data.shape[0 if self.layout == "conv" else 1]

    @property
    def ks(self) -> int:
        return self.weight.data.shape[2]

    def num_params(self) -> int:
        return self.weight.data.size + self.bias.data.size


# ---------------------------------------------------------------------------
# im2col / col2im kernels
# ---------------------------------------------------------------------------

def _pad_hw(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _im2col(x: np.ndarray, ks: int, stride: int, padding: int):
    """Patch matrix of shape (n*ho*wo, c*ks*ks) plus the patch-grid dims."""
    n, c, h, w = x.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < ks or wp < ks:
        raise ShapeError(
            f"spatial dims {h}x{w} with padding {padding} smaller than kernel {ks}"
        )
    ho = (hp - ks) // stride + 1
    wo = (wp - ks) // stride + 1
    xp = _pad_hw(x, padding)
    win = np.lib.stride_tricks.sliding_window_view(xp, (ks, ks), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]              # (n, c, ho, wo, ks, ks)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * ks * ks)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(cols: np.ndarray, n: int, c: int, grid: tuple[int, int],
            out_hw: tuple[int, int], ks: int, stride: int, padding: int) -> np.ndarray:
    """Scatter-accumulate the inverse of _im2col.

    ``grid`` is the (ho, wo) patch grid; ``out_hw`` the unpadded target size.
    """
    ho, wo = grid
    oh, ow = out_hw
    buf = np.zeros((n, c, oh + 2 * padding, ow + 2 * padding))
    pat = cols.reshape(n, ho, wo, c, ks, ks)
    for u in range(ks):
        hu = u + (ho - 1) * stride + 1
        for v in range(ks):
            wv = v + (wo - 1) * stride + 1
            buf[:, :, u:hu:stride, v:wv:stride] += pat[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    if padding == 0:
        return buf
    return np.ascontiguousarray(buf[:, :, padding:padding + oh, padding:padding + ow])


def conv2d_raw(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
               stride: int, padding: int) -> np.ndarray:
    """Forward cross-correlation on plain arrays (shared by autodiff and eval)."""
    n, c, h, wd = x.shape
    cout, cin, ks, _ = w.shape
    if c != cin:
        raise ShapeError(f"input has {c} channels, conv weight expects C_in={cin}")
    cols, ho, wo = _im2col(x, ks, stride, padding)
    out = cols @ w.reshape(cout, cin * ks * ks).T
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if b is not None:
        out += b[None, :, None, None]
    return np.ascontiguousarray(out)


def deconv2d_raw(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                 stride: int, padding: int) -> np.ndarray:
    """Forward transposed convolution; weight layout (C_in, C_out, ks, ks)."""
    n, c, h, wd = x.shape
    cin, cout, ks, _ = w.shape
    if c != cin:
        raise ShapeError(f"input has {c} channels, deconv weight expects C_in={cin}")
    oh = (h - 1) * stride - 2 * padding + ks
    ow = (wd - 1) * stride - 2 * padding + ks
    if oh < 1 or ow < 1:
        raise ShapeError(f"deconv output {oh}x{ow} is empty")
    xm = x.transpose(0, 2, 3, 1).reshape(n * h * wd, cin)
    cols = xm @ w.reshape(cin, cout * ks * ks)
    out = _col2im(cols, n, cout, (h, wd), (oh, ow), ks, stride, padding)
    if b is not None:
        out += b[None, :, None, None]
    return out


def pixel_shuffle_raw(x: np.ndarray, alpha: int) -> np.ndarray:
    n, c, h, w = x.shape
    if alpha < 1:
        raise ValueError("alpha must be a positive integer")
    if c % (alpha * alpha) != 0:
        raise ShapeError(f"channels {c} not divisible by alpha^2={alpha * alpha}")
    co = c // (alpha * alpha)
    out = x.reshape(n, co, alpha, alpha, h, w)
    out = out.transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * alpha, w * alpha)
    return np.ascontiguousarray(out)


def pixel_unshuffle_raw(x: np.ndarray, alpha: int) -> np.ndarray:
    """Exact inverse rearrangement of pixel_shuffle_raw."""
    n, c, h, w = x.shape
    if h % alpha != 0 or w % alpha != 0:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by alpha={alpha}")
    hi, wi = h // alpha, w // alpha
    out = x.reshape(n, c, hi, alpha, wi, alpha)
    out = out.transpose(0, 1, 3, 5, 2, 4).reshape(n, c * alpha * alpha, hi, wi)
    return np.ascontiguousarray(out)


# ---------------------------------------------------------------------------
# autodiff ops
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: ConvWeights) -> Tensor:
    """2-D convolution with bias; gradients for input, weight and bias."""
    if w.layout != "conv":
        raise ShapeError("conv2d requires layout 'conv'")
    wt, bt, s, p = w.weight, w.bias, w.stride, w.padding
    n, cin, h, wd = x.shape
    cout, wcin, ks, _ = wt.shape
    if cin != wcin:
        raise ShapeError(f"input has {cin} channels, conv weight expects C_in={wcin}")
    cols, ho, wo = _im2col(x.data, ks, s, p)
    out = cols @ wt.data.reshape(cout, -1).T
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    out += bt.data[None, :, None, None]
    needs_cols = wt.requires_grad
    saved_cols = cols if needs_cols else None

    def backward(g: np.ndarray) -> None:
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        if wt.requires_grad:
            wt.accumulate((g2.T @ saved_cols).reshape(cout, cin, ks, ks))
        if bt.requires_grad:
            bt.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = g2 @ wt.data.reshape(cout, -1)
            x.accumulate(_col2im(dcols, n, cin, (ho, wo), (h, wd), ks, s, p))

    return _make(out, (x, wt, bt), backward)


def deconv2d(x: Tensor, w: ConvWeights) -> Tensor:
    """Transposed convolution; weight layout (C_in, C_out, ks, ks)."""
    if w.layout != "deconv":
        raise ShapeError("deconv2d requires layout 'deconv'")
    wt, bt, s, p = w.weight, w.bias, w.stride, w.padding
    out = deconv2d_raw(x.data, wt.data, bt.data, s, p)
    n, cin, h, wd = x.shape
    _, cout, ks, _ = wt.shape

    def backward(g: np.ndarray) -> None:
        cols_g, ho, wo = _im2col(g, ks, s, p)
        # the patch grid of the gradient matches the deconv input grid
        if wt.requires_grad:
            xm = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
            wt.accumulate((xm.T @ cols_g).reshape(cin, cout, ks, ks))
        if bt.requires_grad:
            bt.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxm = cols_g @ wt.data.reshape(cin, -1).T
            x.accumulate(dxm.reshape(n, ho, wo, cin).transpose(0, 3, 1, 2))

    return _make(out, (x, wt, bt), backward)


def pixel_shuffle(x: Tensor, alpha: int) -> Tensor:
    """Rearrange alpha^2 channel groups into alpha-times larger planes."""
    out = pixel_shuffle_raw(x.data, alpha)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(pixel_unshuffle_raw(g, alpha))

    return _make(out, (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            # the subgradient at 0 is fixed to the negative-side slope
            x.accumulate(g * np.where(pos, 1.0, slope))

    return _make(out, (x,), backward)


def absval(x: Tensor) -> Tensor:
    out = np.abs(x.data)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(g * np.sign(x.data))

    return _make(out, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch {a.shape} vs {b.shape}")
    out = a.data + b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return _make(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shape mismatch {a.shape} vs {b.shape}")
    out = a.data - b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(-g)

    return _make(out, (a, b), backward)


def add_scalar(x: Tensor, c: float) -> Tensor:
    out = x.data + c

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(g)

    return _make(out, (x,), backward)


def mul_scalar(x: Tensor, c: float) -> Tensor:
    out = x.data * c

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(g * c)

    return _make(out, (x,), backward)


def square(x: Tensor) -> Tensor:
    out = x.data * x.data

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(2.0 * x.data * g)

    return _make(out, (x,), backward)


def tsum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(np.broadcast_to(g, x.shape).copy())

    return _make(out, (x,), backward)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean())

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(np.broadcast_to(g / n, x.shape).copy())

    return _make(out, (x,), backward)


def channel_mix(x: Tensor, r: Tensor) -> Tensor:
    """Apply a (C_out, C_in) matrix across the channel axis of a 4-D map."""
    cout, cin = r.shape
    if x.shape[1] != cin:
        raise ShapeError(f"channel_mix: tensor has {x.shape[1]} channels, matrix expects {cin}")
    out = np.einsum("oc,nchw->nohw", r.data, x.data, optimize=True)

    def backward(g: np.ndarray) -> None:
        if r.requires_grad:
            r.accumulate(np.einsum("nohw,nchw->oc", g, x.data, optimize=True))
        if x.requires_grad:
            x.accumulate(np.einsum("oc,nohw->nchw", r.data, g, optimize=True))

    return _make(out, (x, r), backward)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Elementwise round-half-away-from-zero (numpy rounds half to even)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)
