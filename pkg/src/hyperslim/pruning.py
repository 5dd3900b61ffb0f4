"""Pipeline: attach compactors, penalized training, selection, merge, finetune.

The hyper path is trained under R + lambda*D + beta*L_group-lasso with the
main path frozen. Selection sweeps zero whole compactor rows (soft prune)
until the hyper-path parameter target is met; the physical prune then folds
surviving rows into the host layers and rewires consumers, preserving the
forward function of the soft-pruned network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compactor import (
    KIND_TO_PLACEMENT,
    group_lasso_gradient,
    group_lasso_penalty,
    init_identity,
    merge_layer_weights,
    pruned_matrix,
    rewire_downstream,
    select_channels,
    slice_layer_outputs,
)
from .entropy import rd_loss
from .network import (
    HYPER_PATHS,
    MAIN_PATHS,
    Network,
    count_parameters,
    forward_eval,
    forward_train,
    train_loss,
)
from .optim import make_optimizer
from .tensor import ShapeError


class PruneError(RuntimeError):
    """Pipeline misuse: double attachment, empty masks, bad phase."""


@dataclass
class PruneConfig:
    beta: float = 1e-9
    lam: float = 0.01
    prune_target: float = 0.7
    threshold: float = 1e-4
    selection_interval: int = 500
    finetune_lr: float = 1e-4
    lr: float = 1e-4
    max_steps: int = 1200
    min_keep: int = 1
    optimizer: str = "adam"
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.prune_target <= 1:
            raise ValueError("prune_target must be in (0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")

    @classmethod
    def from_config(cls, cfg) -> "PruneConfig":
        return cls(beta=cfg.beta, lam=cfg.lam, prune_target=cfg.prune_target,
                   threshold=cfg.threshold, selection_interval=cfg.selection_interval,
                   finetune_lr=cfg.finetune_lr, lr=cfg.lr, max_steps=cfg.prune_steps,
                   min_keep=cfg.min_keep, optimizer=cfg.optimizer,
                   batch_size=cfg.batch_size, seed=cfg.seed)


@dataclass
class PruneState:
    step: int = 0
    phase: str = "penalized-training"
    original_hyper_params: int = 0
    current_hyper_params: int = 0
    norms_history: list = field(default_factory=list)
    history_rows: list = field(default_factory=list)
    no_deselect_sweeps: int = 0

    def reduction(self) -> float:
        if self.original_hyper_params == 0:
            return 0.0
        return 1.0 - self.current_hyper_params / self.original_hyper_params


def attach_and_freeze(net: Network) -> Network:
    """Identity compactors on every prunable hyper layer; main path frozen."""
    if net.compactors_attached:
        raise PruneError("compactors already attached")
    net.set_frozen(MAIN_PATHS, True)
    for path in HYPER_PATHS:
        for layer in net.weight_layers(path):
            if not layer.spec.prunable:
                continue
            comp = init_identity(layer.spec.out_channels,
                                 KIND_TO_PLACEMENT[layer.spec.kind])
            comp.attached_layer = layer
            layer.compactor = comp
    net.compactors_attached = True
    return net


def _layer_param_count(kind: str, cin: int, cout: int, ks: int, alpha: int) -> int:
    if kind == "pixelshuffle-conv":
        raw = alpha * alpha * cout
        return raw * cin * ks * ks + raw
    return cout * cin * ks * ks + cout


def hyper_params_if_pruned(net: Network) -> int:
    """Hyper-path parameter count as if kept channels were physically pruned."""
    total = 0
    kept_in = net.weight_layers("h_a")[0].spec.in_channels
    for path in HYPER_PATHS:
        for layer in net.weight_layers(path):
            spec = layer.spec
            kept_out = layer.compactor.kept() if layer.compactor is not None \
                else spec.out_channels
            total += _layer_param_count(spec.kind, kept_in, kept_out, spec.ks, spec.alpha)
            kept_in = kept_out
    return total


def _fill_missing_grads(params) -> None:
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def penalized_step(net: Network, batch, cfg: PruneConfig, opt, rng,
                   rd_backward: bool = True) -> dict:
    """One optimizer step of R + lambda*D + beta*lasso.

    The group-Lasso gradient is added to compactor rows only; deselected
    rows stay exactly zero. ``rd_backward=False`` skips the data backward
    (penalty-only update) for the analytic shrinkage diagnostics.
    """
    opt.zero_grad()
    out = forward_train(net, batch, rng)
    compactors = [l.compactor for _, _, l in net.compactor_layers()]
    rate = (float(out["rate_y_bits"].data) + float(out["rate_z_bits"].data)) / out["num_pixels"]
    breakdown = {
        "R": rate,
        "lambda_D": cfg.lam * float(out["mse"].data),
        "beta_lasso": cfg.beta * group_lasso_penalty(compactors),
    }
    if rd_backward:
        train_loss(out, cfg.lam).backward()
    _fill_missing_grads(opt.params)
    for comp in compactors:
        if not comp.R.requires_grad:
            continue
        if comp.R.grad is None:
            comp.R.grad = np.zeros_like(comp.R.data)
        if cfg.beta != 0.0:
            comp.R.grad += cfg.beta * group_lasso_gradient(comp.R.data)
        comp.R.grad[~comp.mask] = 0.0
    opt.step()
    net.z_model.clamp_scales()
    for comp in compactors:
        comp.R.data[~comp.mask] = 0.0  # adam momentum must not revive dead rows
    breakdown["loss"] = breakdown["R"] + breakdown["lambda_D"] + breakdown["beta_lasso"]
    return breakdown


def selection_sweep(net: Network, state: PruneState, cfg: PruneConfig) -> bool:
    """Deselect below-threshold rows, smallest norms first, up to the target.

    Rows at or above the threshold are never deselected; a deselection that
    would push the as-if-pruned reduction past prune_target is not applied.
    Returns True if any row was newly deselected.
    """
    entries = []
    for path, idx, layer in net.compactor_layers():
        comp = layer.compactor
        keep = select_channels(comp, cfg.threshold, cfg.min_keep)
        norms = comp.row_norms()
        for row in np.flatnonzero(comp.mask & ~keep):
            entries.append((norms[row], path, idx, int(row), comp))
    entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))

    deselected = False
    for _, path, idx, row, comp in entries:
        if comp.kept() <= cfg.min_keep:
            continue
        comp.mask[row] = False
        if state.original_hyper_params and \
                1.0 - hyper_params_if_pruned(net) / state.original_hyper_params > cfg.prune_target:
            comp.mask[row] = True  # would overshoot the target: stop here
            break
        comp.R.data[row] = 0.0
        deselected = True

    state.current_hyper_params = hyper_params_if_pruned(net)
    state.no_deselect_sweeps = 0 if deselected else state.no_deselect_sweeps + 1
    return deselected


def physical_prune_and_merge(net: Network) -> Network:
    """Fold compactors into their hosts and rewire consumers; exact merge."""
    if not net.compactors_attached:
        raise PruneError("no compactors to merge")
    for path, idx, layer in net.compactor_layers():
        comp = layer.compactor
        if comp.kept() < 1:
            raise PruneError(f"{path}[{idx}]: mask keeps no channels")
        rewire_downstream(net, path, idx, comp.mask)
        layer.weights = merge_layer_weights(layer, pruned_matrix(comp))
        layer.spec.out_channels = comp.kept()
        layer.compactor = None
    net.compactors_attached = False
    return net


def _history_header(net: Network) -> str:
    cols = ["step", "R_bpp", "lambda_D", "beta_lasso"]
    cols += [f"kept_{p}.{i}" for p, i, _ in net.compactor_layers()]
    cols.append("hyper_params")
    return ",".join(cols)


def _history_row(net: Network, state: PruneState, breakdown: dict) -> str:
    cells = [str(state.step)] + [f"{breakdown[k]:.6f}" for k in ("R", "lambda_D", "beta_lasso")]
    cells += [str(l.compactor.kept()) for _, _, l in net.compactor_layers()]
    cells.append(str(state.current_hyper_params))
    return ",".join(cells)


def run_prune_pipeline(net: Network, sampler, cfg: PruneConfig) -> tuple[Network, PruneState]:
    """Full cycle: attach, penalized training with sweeps, physical merge."""
    attach_and_freeze(net)
    state = PruneState()
    state.original_hyper_params = count_parameters(net, "hyper-path")
    state.current_hyper_params = state.original_hyper_params
    state.history_rows.append(_history_header(net))

    opt = make_optimizer(cfg.optimizer, net.parameters(), cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    for step in range(1, cfg.max_steps + 1):
        state.step = step
        batch = sampler.batch(cfg.batch_size)
        breakdown = penalized_step(net, batch, cfg, opt, rng)
        if step % cfg.selection_interval == 0:
            selection_sweep(net, state, cfg)
            state.norms_history.append(
                [l.compactor.row_norms().copy() for _, _, l in net.compactor_layers()])
            state.history_rows.append(_history_row(net, state, breakdown))
            if state.no_deselect_sweeps >= 3:
                break

    state.phase = "pruned"
    physical_prune_and_merge(net)
    state.phase = "merged"
    state.current_hyper_params = count_parameters(net, "hyper-path")
    return net, state


def pretrain(net: Network, sampler, cfg: PruneConfig, steps: int,
             lr: float | None = None) -> list[float]:
    """Plain R + lambda*D training of the whole codec; returns loss history."""
    opt = make_optimizer(cfg.optimizer, net.parameters(), lr if lr is not None else cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for _ in range(steps):
        opt.zero_grad()
        out = forward_train(net, sampler.batch(cfg.batch_size), rng)
        loss = train_loss(out, cfg.lam)
        loss.backward()
        _fill_missing_grads(opt.params)
        opt.step()
        net.z_model.clamp_scales()
        losses.append(float(loss.data))
    return losses


def validation_rd_loss(net: Network, images, lam: float) -> float:
    """Mean evaluation-mode RD loss (hard rounding) over a list of images."""
    losses = []
    for img in images:
        x = img[None] if img.ndim == 3 else img
        out = forward_eval(net, x)
        total_bits = out["rate_y_bits"] + out["rate_z_bits"]
        losses.append(rd_loss(total_bits, out["mse"], lam, out["num_pixels"]))
    return float(np.mean(losses))


def finetune(net: Network, sampler, cfg: PruneConfig, steps: int,
             probe_images=None) -> Network:
    """Recover quality with beta=0 training; returns the best-probe weights.

    The probe (default: one deterministic sampler batch) is scored in
    evaluation mode every ~5% of the run; the best snapshot wins, so the
    final probe loss never exceeds the initial one.
    """
    if steps <= 0:
        return net
    if probe_images is None:
        probe_images = [sampler.batch(min(4, cfg.batch_size * 2))]
    params = net.parameters()
    opt = make_optimizer(cfg.optimizer, params, cfg.finetune_lr)
    rng = np.random.default_rng(cfg.seed + 1)
    eval_every = max(1, steps // 20)

    def probe_loss() -> float:
        return validation_rd_loss(net, probe_images, cfg.lam)

    def snapshot() -> list[np.ndarray]:
        return [p.data.copy() for p in params]

    best_loss = probe_loss()
    best = snapshot()
    for step in range(1, steps + 1):
        opt.zero_grad()
        out = forward_train(net, sampler.batch(cfg.batch_size), rng)
        train_loss(out, cfg.lam).backward()
        _fill_missing_grads(opt.params)
        opt.step()
        net.z_model.clamp_scales()
        if step % eval_every == 0 or step == steps:
            loss = probe_loss()
            if loss < best_loss:
                best_loss = loss
                best = snapshot()
    for p, data in zip(params, best):
        p.data = data
    return net


def manual_uniform_prune(net: Network, ratio: float) -> Network:
    """Ablation baseline: keep the ceil(ratio*C) lowest-index channels of
    every prunable hyper layer, keeping the existing weight slices."""
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    if net.compactors_attached:
        raise PruneError("detach/merge compactors before manual pruning")
    net.set_frozen(MAIN_PATHS, True)
    for path in HYPER_PATHS:
        for layer in net.weight_layers(path):
            if not layer.spec.prunable:
                continue
            c = layer.spec.out_channels
            keep = math.ceil(ratio * c)
            if keep < 1:
                raise ValueError(f"ratio {ratio} keeps no channels of {c}")
            if keep == c:
                continue
            mask = np.zeros(c, dtype=bool)
            mask[:keep] = True
            idx = net.paths[path].index(layer)
            rewire_downstream(net, path, idx, mask)
            slice_layer_outputs(layer, mask)
    return net


def manual_ratio_for_params(net: Network, target_hyper_params: int) -> float:
    """Uniform keep-ratio whose slim hyper-path count is closest to target."""
    widths = [l.spec.out_channels for p in HYPER_PATHS for l in net.weight_layers(p)
              if l.spec.prunable]
    cmax = max(widths)
    best_ratio, best_gap = 1.0, float("inf")
    for k in range(1, cmax + 1):
        r = k / cmax
        count = _manual_pruned_count(net, r)
        gap = abs(count - target_hyper_params)
        if gap < best_gap:
            best_gap, best_ratio = gap, r
    return best_ratio


def _manual_pruned_count(net: Network, ratio: float) -> int:
    total = 0
    kept_in = net.weight_layers("h_a")[0].spec.in_channels
    for path in HYPER_PATHS:
        for layer in net.weight_layers(path):
            spec = layer.spec
            kept_out = math.ceil(ratio * spec.out_channels) if spec.prunable \
                else spec.out_channels
            total += _layer_param_count(spec.kind, kept_in, kept_out, spec.ks, spec.alpha)
            kept_in = kept_out
    return total
