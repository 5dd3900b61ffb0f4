"""The four-path hyperprior codec: g_a/g_s (main) and h_a/h_s (hyper).

A Network is built declaratively from per-path LayerSpec lists. The hyper
decoder ends in an absolute-value head plus a floor so the predicted scales
are strictly positive. Training forwards use additive-noise quantization;
evaluation forwards use hard rounding and run on plain arrays (no graph).
"""

from __future__ import annotations

import copy as _copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import compactor as _compactor
from .entropy import (
    FactorizedModel,
    GaussianConditionalModel,
    add_uniform_noise,
    factorized_rate,
    gaussian_rate,
    round_half_away,
)
from .tensor import (
    ConvWeights,
    ShapeError,
    Tensor,
    add,
    add_scalar,
    absval,
    conv2d,
    conv2d_raw,
    deconv2d,
    deconv2d_raw,
    leaky_relu,
    mul_scalar,
    pixel_shuffle,
    pixel_shuffle_raw,
    square,
    sub,
    tmean,
    tsum,
)

PATHS = ("g_a", "g_s", "h_a", "h_s")
MAIN_PATHS = ("g_a", "g_s")
HYPER_PATHS = ("h_a", "h_s")

WEIGHT_KINDS = ("conv", "deconv", "pixelshuffle-conv")
LEAKY_SLOPE = 0.01
MSE_SCALE = 255.0 ** 2


class ConfigError(ValueError):
    """Raised on inconsistent or unknown network/pipeline configuration."""


@dataclass
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    ks: int = 0
    stride: int = 1
    padding: int = 0
    alpha: int = 1
    path: str = ""
    prunable: bool = False
    frozen: bool = False


class Layer:
    """A LayerSpec plus its weight store and (optionally) a compactor."""

    def __init__(self, spec: LayerSpec, weights: ConvWeights | None = None):
        self.spec = spec
        self.weights = weights
        self.compactor = None

    @property
    def is_weight_layer(self) -> bool:
        return self.spec.kind in WEIGHT_KINDS

    def num_params(self) -> int:
        return self.weights.num_params() if self.weights is not None else 0

    def apply(self, x: Tensor) -> Tensor:
        k = self.spec.kind
        if k == "activation":
            out = leaky_relu(x, LEAKY_SLOPE)
        elif k == "conv":
            out = conv2d(x, self.weights)
        elif k == "deconv":
            out = deconv2d(x, self.weights)
        elif k == "pixelshuffle-conv":
            out = pixel_shuffle(conv2d(x, self.weights), self.spec.alpha)
        else:
            raise ConfigError(f"unknown layer kind {k!r}")
        if self.compactor is not None:
            out = _compactor.apply_compactor(out, self.compactor)
        return out

    def apply_raw(self, x: np.ndarray) -> np.ndarray:
        k = self.spec.kind
        w = self.weights
        if k == "activation":
            out = np.where(x > 0, x, LEAKY_SLOPE * x)
        elif k == "conv":
            out = conv2d_raw(x, w.weight.data, w.bias.data, w.stride, w.padding)
        elif k == "deconv":
            out = deconv2d_raw(x, w.weight.data, w.bias.data, w.stride, w.padding)
        elif k == "pixelshuffle-conv":
            out = conv2d_raw(x, w.weight.data, w.bias.data, w.stride, w.padding)
            out = pixel_shuffle_raw(out, self.spec.alpha)
        else:
            raise ConfigError(f"unknown layer kind {k!r}")
        if self.compactor is not None:
            out = _compactor.apply_compactor_raw(out, self.compactor)
        return out


def _init_weights(spec: LayerSpec, rng: np.random.Generator) -> ConvWeights:
    ks, s = spec.ks, spec.stride
    if spec.kind == "conv":
        shape = (spec.out_channels, spec.in_channels, ks, ks)
        fan_in = spec.in_channels * ks * ks
        layout = "conv"
        nbias = spec.out_channels
    elif spec.kind == "pixelshuffle-conv":
        raw_out = spec.alpha ** 2 * spec.out_channels
        shape = (raw_out, spec.in_channels, ks, ks)
        fan_in = spec.in_channels * ks * ks
        layout = "conv"
        nbias = raw_out
    elif spec.kind == "deconv":
        shape = (spec.in_channels, spec.out_channels, ks, ks)
        fan_in = max(1, spec.in_channels * ks * ks // (s * s))
        layout = "deconv"
        nbias = spec.out_channels
    else:
        raise ConfigError(f"layer kind {spec.kind!r} carries no weights")
    w = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape)
    grad = not spec.frozen
    return ConvWeights(Tensor(w, requires_grad=grad),
                       Tensor(np.zeros(nbias), requires_grad=grad),
                       layout, s, spec.padding)


def default_paths(n: int, m: int) -> dict[str, list[LayerSpec]]:
    """Desk-scale topology; stride-2 deconvs use ks4/p1 so upsampling is exact."""
    def conv(ci, co, ks, s, p):
        return LayerSpec("conv", ci, co, ks, s, p)

    def deconv(ci, co, ks, s, p):
        return LayerSpec("deconv", ci, co, ks, s, p)

    def act():
        return LayerSpec("activation")

    return {
        "g_a": [conv(3, n, 5, 2, 2), act(), conv(n, n, 5, 2, 2), act(),
                conv(n, n, 5, 2, 2), act(), conv(n, m, 5, 2, 2)],
        "g_s": [deconv(m, n, 4, 2, 1), act(), deconv(n, n, 4, 2, 1), act(),
                deconv(n, n, 4, 2, 1), act(), deconv(n, 3, 4, 2, 1)],
        "h_a": [conv(m, n, 3, 1, 1), act(), conv(n, n, 5, 2, 2), act(),
                conv(n, n, 5, 2, 2)],
        "h_s": [deconv(n, n, 4, 2, 1), act(),
                LayerSpec("pixelshuffle-conv", n, n, 3, 1, 1, alpha=2),
                act(), conv(n, m, 3, 1, 1)],
    }


class Network:
    """Layer store plus the two entropy models."""

    def __init__(self, n: int, m: int, paths: dict[str, list[Layer]],
                 scale_floor: float = 0.11, likelihood_floor: float = 1e-9):
        self.n = n
        self.m = m
        self.paths = paths
        self.scale_floor = scale_floor
        self.y_model = GaussianConditionalModel(scale_floor, likelihood_floor)
        z_channels = self.weight_layers("h_a")[-1].spec.out_channels
        self.z_model = FactorizedModel.create(z_channels, scale_floor, likelihood_floor)
        self.compactors_attached = False

    # -- structure ---------------------------------------------------------

    def layers(self):
        for path in PATHS:
            for i, layer in enumerate(self.paths[path]):
                yield path, i, layer

    def weight_layers(self, path: str) -> list[Layer]:
        return [l for l in self.paths[path] if l.is_weight_layer]

    def parameters(self, trainable_only: bool = True) -> list[Tensor]:
        params: list[Tensor] = []
        for _, _, layer in self.layers():
            if not layer.is_weight_layer:
                continue
            if trainable_only and layer.spec.frozen:
                continue
            params.extend([layer.weights.weight, layer.weights.bias])
            if layer.compactor is not None:
                params.append(layer.compactor.R)
        if not trainable_only or self.z_model.mean.requires_grad:
            params.extend(self.z_model.parameters())
        return params

    def compactor_layers(self) -> list[tuple[str, int, Layer]]:
        return [(p, i, l) for p, i, l in self.layers() if l.compactor is not None]

    def set_frozen(self, paths: tuple[str, ...], frozen: bool) -> None:
        for path in paths:
            for layer in self.paths[path]:
                if layer.is_weight_layer:
                    layer.spec.frozen = frozen
                    layer.weights.weight.requires_grad = not frozen
                    layer.weights.bias.requires_grad = not frozen

    def copy(self) -> "Network":
        return _copy.deepcopy(self)

    def downsampling_factor(self) -> int:
        f = 1
        for path in ("g_a", "h_a"):
            for layer in self.weight_layers(path):
                f *= layer.spec.stride
        return f

    # -- forward passes ------------------------------------------------------

    def _run(self, path: str, x: Tensor) -> Tensor:
        for layer in self.paths[path]:
            x = layer.apply(x)
        return x

    def _run_raw(self, path: str, x: np.ndarray) -> np.ndarray:
        for layer in self.paths[path]:
            x = layer.apply_raw(x)
        return x

    def _check_input(self, shape) -> None:
        if len(shape) != 4 or shape[1] != 3:
            raise ShapeError(f"expected (n, 3, h, w) input, got {shape}")
        f = self.downsampling_factor()
        if shape[2] % f or shape[3] % f:
            raise ShapeError(
                f"spatial dims {shape[2]}x{shape[3]} must be multiples of {f}"
            )


def build_hyperprior(config) -> Network:
    """Construct a Network from a Config (defaults when no paths given)."""
    n, m = config.N, config.M
    if n < 1 or m < 1:
        raise ConfigError("N and M must be positive")
    if config.paths is None:
        specs = default_paths(n, m)
    else:
        specs = {p: [_spec_from_dict(d, p) for d in config.paths[p]] for p in PATHS}

    _validate_chain(specs, m)

    rng = np.random.default_rng(config.seed)
    paths: dict[str, list[Layer]] = {}
    for path in PATHS:
        layers = []
        for spec in specs[path]:
            spec.path = path
            layer = Layer(spec)
            if spec.kind in WEIGHT_KINDS:
                layer.weights = _init_weights(spec, rng)
            layers.append(layer)
        paths[path] = layers

    net = Network(n, m, paths, config.scale_floor, config.likelihood_floor)
    # hyper-path weight layers are prunable except the last hyper-decoder layer
    for path in HYPER_PATHS:
        for layer in net.weight_layers(path):
            layer.spec.prunable = True
    net.weight_layers("h_s")[-1].spec.prunable = False
    return net


def _spec_from_dict(d: dict, path: str) -> LayerSpec:
    allowed = {"kind", "in_channels", "out_channels", "ks", "stride", "padding", "alpha"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown layer keys {sorted(unknown)}")
    kind = d.get("kind")
    if kind == "activation":
        return LayerSpec("activation")
    if kind not in WEIGHT_KINDS:
        raise ConfigError(f"{path}: unknown layer kind {kind!r}")
    try:
        spec = LayerSpec(kind, int(d["in_channels"]), int(d["out_channels"]),
                         int(d["ks"]), int(d.get("stride", 1)),
                         int(d.get("padding", 0)), int(d.get("alpha", 1)))
    except KeyError as e:
        raise ConfigError(f"{path}: layer missing key {e.args[0]!r}") from None
    if kind == "pixelshuffle-conv" and spec.alpha < 1:
        raise ConfigError(f"{path}: pixelshuffle-conv needs alpha >= 1")
    return spec


def _validate_chain(specs: dict[str, list[LayerSpec]], m: int) -> None:
    expected_in = {"g_a": 3, "g_s": None, "h_a": m, "h_s": None}
    final_out = {"g_a": None, "g_s": 3, "h_a": None, "h_s": m}
    for path in PATHS:
        chain = [s for s in specs[path] if s.kind in WEIGHT_KINDS]
        if not chain:
            raise ConfigError(f"{path}: no weight layers")
        if expected_in[path] is not None and chain[0].in_channels != expected_in[path]:
            raise ConfigError(
                f"{path}[0]: in_channels {chain[0].in_channels}, expected {expected_in[path]}"
            )
        for k in range(1, len(chain)):
            if chain[k].in_channels != chain[k - 1].out_channels:
                raise ConfigError(
                    f"{path} layer {k}: in_channels {chain[k].in_channels} does not "
                    f"match previous out_channels {chain[k - 1].out_channels}"
                )
        if final_out[path] is not None and chain[-1].out_channels != final_out[path]:
            raise ConfigError(
                f"{path} final layer: out_channels {chain[-1].out_channels}, "
                f"expected {final_out[path]}"
            )
    # the hyper decoder feeds scales for y, the hyper encoder consumes y
    if specs["g_s"][0 if specs["g_s"][0].kind in WEIGHT_KINDS else 1].in_channels != \
            [s for s in specs["g_a"] if s.kind in WEIGHT_KINDS][-1].out_channels:
        raise ConfigError("g_s input channels must equal g_a output channels (M)")


def forward_train(net: Network, x: Tensor, seed) -> dict:
    """Noise-quantized training forward; returns graph tensors for the loss."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    net._check_input(x.shape)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    y = net._run("g_a", x)
    y_tilde = add_uniform_noise(y, rng)
    z = net._run("h_a", y)
    z_tilde = add_uniform_noise(z, rng)
    sigma_tilde = add_scalar(absval(net._run("h_s", z_tilde)), net.scale_floor)

    bits_y, _ = gaussian_rate(y_tilde, sigma_tilde, net.y_model)
    bits_z, _ = factorized_rate(z_tilde, net.z_model)
    x_tilde = net._run("g_s", y_tilde)
    mse = mul_scalar(tmean(square(sub(x, x_tilde))), MSE_SCALE)

    n, _, h, w = x.shape
    return {
        "x_tilde": x_tilde,
        "y_tilde": y_tilde,
        "z_tilde": z_tilde,
        "sigma_tilde": sigma_tilde,
        "rate_y_bits": tsum(bits_y),
        "rate_z_bits": tsum(bits_z),
        "mse": mse,
        "num_pixels": n * h * w,
    }


def train_loss(out: dict, lam: float) -> Tensor:
    """R + lambda*D as a graph scalar, rate in bits per pixel."""
    rate = mul_scalar(add(out["rate_y_bits"], out["rate_z_bits"]), 1.0 / out["num_pixels"])
    return add(rate, mul_scalar(out["mse"], lam))


def forward_eval(net: Network, x: np.ndarray) -> dict:
    """Hard-rounding evaluation forward on plain arrays; deterministic."""
    if isinstance(x, Tensor):
        x = x.data
    net._check_input(x.shape)

    y = net._run_raw("g_a", x)
    y_hat = round_half_away(y)
    z = net._run_raw("h_a", y)
    z_hat = round_half_away(z)
    sigma_hat = np.abs(net._run_raw("h_s", z_hat)) + net.scale_floor

    bits_y, rate_y = gaussian_rate(Tensor(y_hat), Tensor(sigma_hat), net.y_model)
    bits_z, rate_z = factorized_rate(Tensor(z_hat), net.z_model)
    x_hat = net._run_raw("g_s", y_hat)
    mse = float(((x - x_hat) ** 2).mean() * MSE_SCALE)

    n, _, h, w = x.shape
    return {
        "x_hat": x_hat,
        "y_hat": y_hat,
        "z_hat": z_hat,
        "sigma_hat": sigma_hat,
        "rate_y_bits": rate_y,
        "rate_z_bits": rate_z,
        "mse": mse,
        "num_pixels": n * h * w,
    }


def count_parameters(net: Network, scope: str = "total"):
    """Weight+bias element counts. Attached compactors are reparameterization
    scaffolding and are not counted; merged networks count their actual layers."""
    if scope == "per-layer":
        return {f"{p}.{i}": l.num_params() for p, i, l in net.layers() if l.is_weight_layer}
    if scope == "total":
        paths = PATHS
    elif scope == "main-path":
        paths = MAIN_PATHS
    elif scope == "hyper-path":
        paths = HYPER_PATHS
    elif scope == "empty":
        return 0
    else:
        raise ConfigError(f"unknown scope {scope!r}")
    return sum(l.num_params() for p in paths for l in net.paths[p])
