"""HPCK v1 checkpoint format.

Layout (all integers little-endian):

    magic  b"HPCK"
    u32    version (1)
    u32    tensor count
    per tensor:
        u16     name length, then UTF-8 name bytes
        u8      ndim
        u32[n]  dims
        f64[.]  row-major payload, little-endian

Masks are stored as 0/1 float payloads. Byte-exact round-trip is part of
the format contract: write(read(f)) == f.
"""

from __future__ import annotations

import struct

import numpy as np

from .compactor import KIND_TO_PLACEMENT, Compactor
from .network import Network, PATHS
from .tensor import ConvWeights, Tensor

MAGIC = b"HPCK"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint file or incompatible state."""


def state_dict(net: Network) -> dict[str, np.ndarray]:
    """Deterministically ordered name -> array mapping."""
    state: dict[str, np.ndarray] = {}
    for path in PATHS:
        for i, layer in enumerate(net.paths[path]):
            if not layer.is_weight_layer:
                continue
            state[f"{path}.{i}.weight"] = layer.weights.weight.data
            state[f"{path}.{i}.bias"] = layer.weights.bias.data
            if layer.compactor is not None:
                state[f"{path}.{i}.compactor.R"] = layer.compactor.R.data
                state[f"{path}.{i}.compactor.mask"] = layer.compactor.mask.astype(np.float64)
    state["entropy_z.mean"] = net.z_model.mean.data
    state["entropy_z.scale"] = net.z_model.scale.data
    return state


def write_hpck(state: dict[str, np.ndarray], path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(state)))
        for name, arr in state.items():
            nb = name.encode("utf-8")
            arr = np.asarray(arr, dtype=np.float64)
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype("<f8").tobytes())


def read_hpck(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError("not an HPCK file (bad magic)")
    off = 4
    version, count = struct.unpack_from("<II", blob, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"unsupported HPCK version {version}")
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(dims)
        off += 8 * n
        state[name] = arr.astype(np.float64)
    if off != len(blob):
        raise CheckpointError(f"{len(blob) - off} trailing bytes after last tensor")
    return state


def save_checkpoint(net: Network, path) -> None:
    write_hpck(state_dict(net), path)


def load_checkpoint(net: Network, path) -> Network:
    """Load state into a config-built network, adapting channel widths.

    Pruned checkpoints carry narrower tensors than the config topology;
    layer channel metadata and the factorized model follow the stored
    shapes. Kernel geometry must match the config.
    """
    state = read_hpck(path)
    consumed = set()
    for path_name in PATHS:
        for i, layer in enumerate(net.paths[path_name]):
            if not layer.is_weight_layer:
                continue
            wk, bk = f"{path_name}.{i}.weight", f"{path_name}.{i}.bias"
            if wk not in state or bk not in state:
                raise CheckpointError(f"checkpoint missing tensors for {path_name}[{i}]")
            w, b = state[wk], state[bk]
            old = layer.weights
            if w.ndim != 4 or w.shape[2] != old.ks or w.shape[3] != old.ks:
                raise CheckpointError(
                    f"{wk}: kernel {w.shape} incompatible with config ks={old.ks}"
                )
            grad = old.weight.requires_grad
            layer.weights = ConvWeights(Tensor(w.copy(), requires_grad=grad),
                                        Tensor(b.copy(), requires_grad=grad),
                                        old.layout, old.stride, old.padding)
            spec = layer.spec
            if spec.kind == "conv":
                spec.out_channels, spec.in_channels = w.shape[0], w.shape[1]
            elif spec.kind == "pixelshuffle-conv":
                a2 = spec.alpha ** 2
                if w.shape[0] % a2:
                    raise CheckpointError(f"{wk}: raw channels not divisible by alpha^2")
                spec.out_channels, spec.in_channels = w.shape[0] // a2, w.shape[1]
            else:
                spec.in_channels, spec.out_channels = w.shape[0], w.shape[1]
            consumed.update((wk, bk))

            rk, mk = f"{path_name}.{i}.compactor.R", f"{path_name}.{i}.compactor.mask"
            if rk in state:
                comp = Compactor(Tensor(state[rk].copy(), requires_grad=True),
                                 state[mk].astype(bool),
                                 KIND_TO_PLACEMENT[spec.kind], layer)
                layer.compactor = comp
                net.compactors_attached = True
                consumed.update((rk, mk))

    for key in ("entropy_z.mean", "entropy_z.scale"):
        if key not in state:
            raise CheckpointError(f"checkpoint missing {key}")
    zm = net.z_model
    zm.mean = Tensor(state["entropy_z.mean"].copy(), requires_grad=True)
    zm.scale = Tensor(state["entropy_z.scale"].copy(), requires_grad=True)
    consumed.update(("entropy_z.mean", "entropy_z.scale"))

    extra = set(state) - consumed
    if extra:
        raise CheckpointError(f"checkpoint has unmatched tensors {sorted(extra)}")
    return net
