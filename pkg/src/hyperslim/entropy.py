"""Quantization surrogates and idealized entropy rates for the latents.

Rates are computed as the negative log2 probability of each quantized value
under a Gaussian integrated over its unit quantization bin. No bitstream is
produced; the bit counts are the idealized entropy of the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .tensor import Tensor, ShapeError, _make, round_half_away

LOG2E = 1.0 / np.log(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass
class GaussianConditionalModel:
    """Zero-mean conditional Gaussian for y; sigma comes from the hyper path."""

    scale_floor: float = 0.11
    likelihood_floor: float = 1e-9

    def __post_init__(self):
        if self.scale_floor <= 0 or self.likelihood_floor <= 0:
            raise ValueError("scale_floor and likelihood_floor must be positive")


@dataclass
class FactorizedModel:
    """Per-channel Gaussian prior for z with learnable mean and scale."""

    mean: Tensor
    scale: Tensor
    scale_floor: float = 0.11
    likelihood_floor: float = 1e-9

    @classmethod
    def create(cls, channels: int, scale_floor: float = 0.11,
               likelihood_floor: float = 1e-9) -> "FactorizedModel":
        mean = Tensor(np.zeros((1, channels, 1, 1)), requires_grad=True)
        scale = Tensor(np.ones((1, channels, 1, 1)), requires_grad=True)
        return cls(mean, scale, scale_floor, likelihood_floor)

    @property
    def channels(self) -> int:
        return self.mean.data.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.mean, self.scale]

    def clamp_scales(self) -> None:
        """Keep scales at or above the floor after every optimizer update."""
        np.maximum(self.scale.data, self.scale_floor, out=self.scale.data)

    def slice_channels(self, mask: np.ndarray) -> None:
        self.mean = Tensor(self.mean.data[:, mask], requires_grad=self.mean.requires_grad)
        self.scale = Tensor(self.scale.data[:, mask], requires_grad=self.scale.requires_grad)


def add_uniform_noise(y: Tensor, rng_seed) -> Tensor:
    """Additive U(-0.5, 0.5) quantization surrogate, deterministic per seed."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    noise = rng.uniform(-0.5, 0.5, size=y.shape)
    out = y.data + noise

    def backward(g: np.ndarray) -> None:
        if y.requires_grad:
            y.accumulate(g)

    return _make(out, (y,), backward)


def quantize_round(y: Tensor) -> Tensor:
    """Hard rounding (half away from zero); used at evaluation, no gradient."""
    return Tensor(round_half_away(y.data))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, ps) in enumerate(zip(g.shape, shape)) if ps == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def gaussian_bin_bits(v: Tensor, mean: Tensor | None, sigma: Tensor,
                      scale_floor: float, likelihood_floor: float) -> Tensor:
    """Per-element bits -log2(Phi((v-mu+.5)/s) - Phi((v-mu-.5)/s)), clamped.

    ``mean``/``sigma`` may broadcast against ``v`` (per-channel (1,C,1,1)
    parameters); gradients are reduced back to the parameter shape.
    """
    mu = mean.data if mean is not None else 0.0
    sig_raw = sigma.data
    clamped = sig_raw < scale_floor
    sig = np.maximum(sig_raw, scale_floor)
    centered = v.data - mu
    hi = (centered + 0.5) / sig
    lo = (centered - 0.5) / sig
    p = ndtr(hi) - ndtr(lo)
    floored = p < likelihood_floor
    pc = np.maximum(p, likelihood_floor)
    bits = -np.log2(pc)

    def backward(g: np.ndarray) -> None:
        phi_hi = _INV_SQRT_2PI * np.exp(-0.5 * hi * hi)
        phi_lo = _INV_SQRT_2PI * np.exp(-0.5 * lo * lo)
        # d bits / d p = -1/(p ln 2), dead where the likelihood floor clamps
        dbits_dp = np.where(floored, 0.0, -LOG2E / pc) * g
        if v.requires_grad:
            v.accumulate(_unbroadcast(dbits_dp * (phi_hi - phi_lo) / sig, v.data.shape))
        if mean is not None and mean.requires_grad:
            mean.accumulate(_unbroadcast(dbits_dp * (phi_lo - phi_hi) / sig, mean.data.shape))
        if sigma.requires_grad:
            dsig = dbits_dp * (phi_lo * lo - phi_hi * hi) / sig
            dsig = np.where(clamped, 0.0, dsig)
            sigma.accumulate(_unbroadcast(dsig, sigma.data.shape))

    parents = (v, sigma) if mean is None else (v, mean, sigma)
    return _make(bits, parents, backward)


def gaussian_rate(y_hat: Tensor, sigma: Tensor,
                  model: GaussianConditionalModel) -> tuple[Tensor, float]:
    """Bits for y under the zero-mean conditional model: (per-element, total)."""
    if y_hat.shape != sigma.shape:
        raise ShapeError(f"value/scale shape mismatch {y_hat.shape} vs {sigma.shape}")
    bits = gaussian_bin_bits(y_hat, None, sigma, model.scale_floor, model.likelihood_floor)
    return bits, float(bits.data.sum())


def factorized_rate(z_hat: Tensor, model: FactorizedModel) -> tuple[Tensor, float]:
    """Bits for z under the per-channel factorized prior: (per-element, total)."""
    if z_hat.shape[1] != model.channels:
        raise ShapeError(
            f"z has {z_hat.shape[1]} channels, factorized model has {model.channels}"
        )
    bits = gaussian_bin_bits(z_hat, model.mean, model.scale,
                             model.scale_floor, model.likelihood_floor)
    return bits, float(bits.data.sum())


def rd_loss(rate_bits_total: float, mse: float, lam: float, num_pixels: int) -> float:
    """Rate-distortion objective with the rate in bits per pixel."""
    if num_pixels <= 0:
        raise ValueError("num_pixels must be positive")
    return rate_bits_total / num_pixels + lam * mse
