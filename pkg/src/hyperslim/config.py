"""Configuration schema, JSON loading with strict key validation, presets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .network import ConfigError, PATHS

# JSON key -> dataclass field ("lambda" is a Python keyword)
_KEY_MAP = {
    "N": "N", "M": "M", "lambda": "lam", "beta": "beta",
    "prune_target": "prune_target", "seed": "seed", "paths": "paths",
    "lr": "lr", "finetune_lr": "finetune_lr", "threshold": "threshold",
    "selection_interval": "selection_interval", "min_keep": "min_keep",
    "pretrain_steps": "pretrain_steps", "prune_steps": "prune_steps",
    "finetune_steps": "finetune_steps", "batch_size": "batch_size",
    "patch_size": "patch_size", "optimizer": "optimizer",
    "scale_floor": "scale_floor", "likelihood_floor": "likelihood_floor",
}


@dataclass
class Config:
    N: int = 32
    M: int = 48
    lam: float = 0.01
    beta: float = 1e-9
    prune_target: float = 0.7
    seed: int = 0
    paths: dict | None = None
    lr: float = 1e-4
    finetune_lr: float = 1e-4
    threshold: float = 1e-4
    selection_interval: int = 500
    min_keep: int = 1
    pretrain_steps: int = 5000
    prune_steps: int = 1200
    finetune_steps: int = 2000
    batch_size: int = 4
    patch_size: int = 64
    optimizer: str = "adam"
    scale_floor: float = 0.11
    likelihood_floor: float = 1e-9

    def validate(self) -> "Config":
        if self.N < 1 or self.M < 1:
            raise ConfigError("N and M must be positive integers")
        if not 0 < self.prune_target <= 1:
            raise ConfigError("prune_target must be in (0, 1]")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.min_keep < 1:
            raise ConfigError("min_keep must be at least 1")
        if self.paths is not None:
            missing = [p for p in PATHS if p not in self.paths]
            if missing:
                raise ConfigError(f"paths is missing {missing}")
            unknown = set(self.paths) - set(PATHS)
            if unknown:
                raise ConfigError(f"unknown path keys {sorted(unknown)}")
        return self


def config_from_dict(raw: dict) -> Config:
    unknown = set(raw) - set(_KEY_MAP)
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    kwargs = {_KEY_MAP[k]: v for k, v in raw.items()}
    int_fields = {"N", "M", "seed", "selection_interval", "min_keep", "pretrain_steps",
                  "prune_steps", "finetune_steps", "batch_size", "patch_size"}
    for f in fields(Config):
        if f.name not in kwargs:
            continue
        v = kwargs[f.name]
        if f.name in int_fields:
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"config key for {f.name} must be an integer")
        elif f.name == "paths":
            if not isinstance(v, dict):
                raise ConfigError("paths must be an object")
        elif f.name == "optimizer":
            if not isinstance(v, str):
                raise ConfigError("optimizer must be a string")
        elif not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"config key for {f.name} must be a number")
    return Config(**kwargs).validate()


def load_config(path) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(raw)


def _classic_paths(n: int, m: int) -> dict:
    """Layer map of the reference hyperprior at publication widths.

    Used for parameter accounting against published totals; its odd-kernel
    stride-2 deconvolutions do not upsample exactly under this package's
    transposed-convolution geometry, so these configs are count-only.
    """
    def conv(ci, co, ks, s, p):
        return {"kind": "conv", "in_channels": ci, "out_channels": co,
                "ks": ks, "stride": s, "padding": p}

    def deconv(ci, co, ks, s, p):
        return {"kind": "deconv", "in_channels": ci, "out_channels": co,
                "ks": ks, "stride": s, "padding": p}

    act = {"kind": "activation"}
    return {
        "g_a": [conv(3, n, 5, 2, 2), act, conv(n, n, 5, 2, 2), act,
                conv(n, n, 5, 2, 2), act, conv(n, m, 5, 2, 2)],
        "g_s": [deconv(m, n, 5, 2, 2), act, deconv(n, n, 5, 2, 2), act,
                deconv(n, n, 5, 2, 2), act, deconv(n, 3, 5, 2, 2)],
        "h_a": [conv(m, n, 3, 1, 1), act, conv(n, n, 5, 2, 2), act,
                conv(n, n, 5, 2, 2)],
        "h_s": [deconv(n, n, 5, 2, 2), act, deconv(n, n, 5, 2, 2), act,
                conv(n, m, 3, 1, 1)],
    }


# published parameter totals for the two width regimes of the reference model
PAPER_SCALE_WIDTHS = {"low": (128, 192), "high": (192, 320)}
PAPER_SCALE_TOTALS = {"low": 4.969e6, "high": 11.582e6}


def paper_scale_config(which: str = "low") -> Config:
    if which not in PAPER_SCALE_WIDTHS:
        raise ConfigError(f"unknown paper-scale regime {which!r}; use 'low' or 'high'")
    n, m = PAPER_SCALE_WIDTHS[which]
    return Config(N=n, M=m, paths=_classic_paths(n, m)).validate()
