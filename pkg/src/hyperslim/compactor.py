"""Compactor layers and their exact absorption into host layers.

A compactor is an identity-initialized 1x1 channel mixer appended after a
host layer (directly after a conv or deconv, and after the shuffle of a
pixelshuffle-conv). The group-Lasso penalty drives whole compactor rows to
zero; surviving rows are then folded algebraically into the host weights so
the slim network is an ordinary dense network with exactly equivalent
outputs.

Merge rules, with R' the pruned (C' x C) compactor matrix:

  conv    W'[j,c,u,v] = sum_m R'[j,m] W[m,c,u,v]        b'[j] = sum_m R'[j,m] b[m]
  shuffle W'[j*a^2+k]  = sum_m R'[j,m] W[m*a^2+k]        (per phase k < a^2)
  deconv  W'[c,j,u,v] = sum_m R'[j,m] W[c,m,u,v]        bias as for conv
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ConvWeights, ShapeError, Tensor, channel_mix

PLACEMENTS = ("after-conv", "after-shuffle", "after-deconv")

KIND_TO_PLACEMENT = {
    "conv": "after-conv",
    "pixelshuffle-conv": "after-shuffle",
    "deconv": "after-deconv",
}

# rows with norm at or below this are treated as exactly zero (subgradient 0)
NORM_DEAD_ZONE = 1e-12


@dataclass
class Compactor:
    """1x1 channel mixer; R starts as the identity, mask marks kept channels."""

    R: Tensor
    mask: np.ndarray
    placement: str = "after-conv"
    attached_layer: object = None

    @property
    def channels(self) -> int:
        return self.R.data.shape[1]

    def row_norms(self) -> np.ndarray:
        return np.sqrt((self.R.data ** 2).sum(axis=1))

    def kept(self) -> int:
        return int(self.mask.sum())


def init_identity(c: int, placement: str = "after-conv") -> Compactor:
    if c < 1:
        raise ValueError(f"compactor needs at least one channel, got {c}")
    if placement not in PLACEMENTS:
        raise ValueError(f"unknown placement {placement!r}")
    return Compactor(Tensor(np.eye(c), requires_grad=True),
                     np.ones(c, dtype=bool), placement)


def apply_compactor(t: Tensor, c: Compactor) -> Tensor:
    return channel_mix(t, c.R)


def apply_compactor_raw(x: np.ndarray, c: Compactor) -> np.ndarray:
    if x.shape[1] != c.channels:
        raise ShapeError(f"tensor has {x.shape[1]} channels, compactor expects {c.channels}")
    return np.einsum("oc,nchw->nohw", c.R.data, x, optimize=True)


def pruned_matrix(c: Compactor) -> np.ndarray:
    """R restricted to kept rows, ascending original-channel order."""
    return np.ascontiguousarray(c.R.data[c.mask])


# ---------------------------------------------------------------------------
# penalties
# ---------------------------------------------------------------------------

def lasso_penalty(w) -> float:
    """Plain elementwise l1 of a weight array."""
    return float(np.abs(np.asarray(w)).sum())


def group_lasso_penalty(compactors) -> float:
    """Sum of Euclidean row norms over all compactor matrices."""
    total = 0.0
    for c in compactors:
        total += float(np.sqrt((c.R.data ** 2).sum(axis=1)).sum())
    return total


def group_lasso_gradient(r: np.ndarray) -> np.ndarray:
    """Row-wise unit vectors; zero rows (within the dead zone) get zero."""
    r = np.asarray(r, dtype=np.float64)
    norms = np.sqrt((r ** 2).sum(axis=1, keepdims=True))
    safe = np.where(norms > NORM_DEAD_ZONE, norms, 1.0)
    return np.where(norms > NORM_DEAD_ZONE, r / safe, 0.0)


def select_channels(c: Compactor, threshold: float, min_keep: int = 1) -> np.ndarray:
    """Keep rows with norm >= threshold, backstopped by the min_keep largest."""
    if min_keep < 1:
        raise ValueError("min_keep must be at least 1")
    norms = c.row_norms()
    mask = norms >= threshold
    if mask.sum() < min_keep:
        # largest norms win, ties broken by lower channel index
        order = np.lexsort((np.arange(norms.size), -norms))
        mask = np.zeros(norms.size, dtype=bool)
        mask[order[:min_keep]] = True
    return mask


# ---------------------------------------------------------------------------
# merges
# ---------------------------------------------------------------------------

def _rp_array(rp) -> np.ndarray:
    if isinstance(rp, Compactor):
        return pruned_matrix(rp)
    if isinstance(rp, Tensor):
        return rp.data
    return np.asarray(rp, dtype=np.float64)


def _clone_grad_flag(w: ConvWeights) -> bool:
    return w.weight.requires_grad


def merge_conv(w: ConvWeights, rp) -> ConvWeights:
    """Fold a pruned compactor into a convolution: new C_out = C'."""
    r = _rp_array(rp)
    if w.layout != "conv":
        raise ShapeError("merge_conv needs a conv-layout weight")
    if r.ndim != 2 or r.shape[1] != w.out_channels:
        raise ShapeError(
            f"compactor columns {r.shape} do not match conv C_out={w.out_channels}"
        )
    merged_w = np.einsum("jm,mcuv->jcuv", r, w.weight.data, optimize=True)
    merged_b = r @ w.bias.data
    grad = _clone_grad_flag(w)
    return ConvWeights(Tensor(merged_w, requires_grad=grad),
                       Tensor(merged_b, requires_grad=grad),
                       "conv", w.stride, w.padding)


def merge_pixelshuffle(w_ps: ConvWeights, rp, alpha: int) -> ConvWeights:
    """Fold a post-shuffle compactor into the pre-shuffle convolution.

    The raw conv emits a^2 phase channels per shuffled channel (block
    layout); each phase slice is mixed by R' independently, so merged raw
    channel j*a^2 + k collects sum_m R'[j,m] W[m*a^2 + k].
    """
    r = _rp_array(rp)
    if w_ps.layout != "conv":
        raise ShapeError("merge_pixelshuffle needs the conv-layout host weight")
    a2 = alpha * alpha
    raw_out = w_ps.out_channels
    if raw_out % a2 != 0:
        raise ShapeError(f"host C_out={raw_out} not divisible by alpha^2={a2}")
    c = raw_out // a2
    if r.ndim != 2 or r.shape[1] != c:
        raise ShapeError(f"compactor columns {r.shape} do not match shuffled C={c}")
    cin, ks = w_ps.in_channels, w_ps.ks
    w_view = w_ps.weight.data.reshape(c, a2, cin, ks, ks)
    merged_w = np.einsum("jm,mkcuv->jkcuv", r, w_view, optimize=True)
    merged_w = merged_w.reshape(r.shape[0] * a2, cin, ks, ks)
    merged_b = (r @ w_ps.bias.data.reshape(c, a2)).reshape(-1)
    grad = _clone_grad_flag(w_ps)
    return ConvWeights(Tensor(merged_w, requires_grad=grad),
                       Tensor(merged_b, requires_grad=grad),
                       "conv", w_ps.stride, w_ps.padding)


def merge_deconv(w_de: ConvWeights, rp) -> ConvWeights:
    """Fold a pruned compactor into a transposed convolution (C_in, C_out, ks, ks)."""
    r = _rp_array(rp)
    if w_de.layout != "deconv":
        raise ShapeError("merge_deconv needs a deconv-layout weight")
    if r.ndim != 2 or r.shape[1] != w_de.out_channels:
        raise ShapeError(
            f"compactor columns {r.shape} do not match deconv C_out={w_de.out_channels}"
        )
    merged_w = np.einsum("jm,cmuv->cjuv", r, w_de.weight.data, optimize=True)
    merged_b = r @ w_de.bias.data
    grad = _clone_grad_flag(w_de)
    return ConvWeights(Tensor(merged_w, requires_grad=grad),
                       Tensor(merged_b, requires_grad=grad),
                       "deconv", w_de.stride, w_de.padding)


def merge_layer_weights(layer, rp) -> ConvWeights:
    """Dispatch on the host layer kind."""
    kind = layer.spec.kind
    if kind == "conv":
        return merge_conv(layer.weights, rp)
    if kind == "pixelshuffle-conv":
        return merge_pixelshuffle(layer.weights, rp, layer.spec.alpha)
    if kind == "deconv":
        return merge_deconv(layer.weights, rp)
    raise ShapeError(f"layer kind {kind!r} cannot host a compactor")


# ---------------------------------------------------------------------------
# rewiring
# ---------------------------------------------------------------------------

def _slice_inputs(layer, mask: np.ndarray) -> None:
    w = layer.weights
    grad = w.weight.requires_grad
    if w.layout == "conv":
        new_w = w.weight.data[:, mask]
    else:
        new_w = w.weight.data[mask, :]
    layer.weights = ConvWeights(Tensor(np.ascontiguousarray(new_w), requires_grad=grad),
                                Tensor(w.bias.data.copy(), requires_grad=grad),
                                w.layout, w.stride, w.padding)
    layer.spec.in_channels = int(mask.sum())


def slice_layer_outputs(layer, mask: np.ndarray) -> None:
    """Drop output channels of a weight layer (block-grouped for pixelshuffle)."""
    w = layer.weights
    grad = w.weight.requires_grad
    if layer.spec.kind == "pixelshuffle-conv":
        a2 = layer.spec.alpha ** 2
        raw_mask = np.repeat(mask, a2)
        new_w, new_b = w.weight.data[raw_mask], w.bias.data[raw_mask]
    elif w.layout == "conv":
        new_w, new_b = w.weight.data[mask], w.bias.data[mask]
    else:
        new_w, new_b = w.weight.data[:, mask], w.bias.data[mask]
    layer.weights = ConvWeights(Tensor(np.ascontiguousarray(new_w), requires_grad=grad),
                                Tensor(new_b.copy(), requires_grad=grad),
                                w.layout, w.stride, w.padding)
    layer.spec.out_channels = int(mask.sum())


def rewire_downstream(net, path: str, index: int, mask: np.ndarray):
    """Shrink the consumer of a pruned layer to the surviving channels.

    The consumer is the next weight layer in the same path; the hyper
    encoder's last layer feeds both the factorized entropy model and the
    first hyper-decoder layer. The final hyper-decoder layer produces the
    per-channel scales for y and must never be pruned.
    """
    layers = net.paths[path]
    layer = layers[index]
    if not layer.is_weight_layer:
        raise ShapeError(f"{path}[{index}] carries no weights")
    if path == "h_s" and layer is net.weight_layers("h_s")[-1]:
        raise ShapeError("the last hyper-decoder layer is not prunable "
                         "(its output width is fixed by y)")
    mask = np.asarray(mask, dtype=bool)
    if mask.size != layer.spec.out_channels:
        raise ShapeError(
            f"mask length {mask.size} does not match {path}[{index}] "
            f"out_channels={layer.spec.out_channels}"
        )
    if mask.all():
        return net

    consumer = None
    for nxt in layers[index + 1:]:
        if nxt.is_weight_layer:
            consumer = nxt
            break
    if consumer is not None:
        _slice_inputs(consumer, mask)
    elif path == "h_a":
        net.z_model.slice_channels(mask)
        _slice_inputs(net.weight_layers("h_s")[0], mask)
    else:
        raise ShapeError(f"{path}[{index}] has no downstream consumer to rewire")
    return net
