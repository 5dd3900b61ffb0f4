"""Command-line front door for the codec pruning pipeline.

Exit codes: 0 success, 1 validation error (bad flags, config, inputs),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import Config, load_config
from .data import DataError, load_images
from .metrics import (
    compare_models,
    evaluate_model,
    ratio_report,
    read_report_csv,
    write_report_csv,
)
from .network import ConfigError, MAIN_PATHS, build_hyperprior, count_parameters
from .pruning import (
    PruneConfig,
    PruneError,
    finetune,
    manual_uniform_prune,
    pretrain,
    run_prune_pipeline,
)
from .tensor import ShapeError
from .verify import MERGE_TOLERANCE, merge_verify

VALIDATION_ERRORS = (ConfigError, DataError, CheckpointError, ShapeError,
                     PruneError, FileNotFoundError, NotADirectoryError, ValueError)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _build_parser() -> _Parser:
    p = _Parser(prog="hyperslim",
                description="Train, prune, merge and evaluate a hyperprior codec.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=False, checkpoint=False):
        if data:
            sp.add_argument("data_dir", help="directory of .ppm/.pgm images")
        sp.add_argument("--config", help="JSON config file")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, help="input HPCK checkpoint")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")

    common(sub.add_parser("pretrain", help="train the full codec from scratch"),
           data=True)
    common(sub.add_parser("prune", help="compactor pipeline: penalize, select, merge"),
           data=True, checkpoint=True)
    mp = sub.add_parser("manual-prune", help="uniform lowest-index channel baseline")
    mp.add_argument("--ratio", type=float, required=True, help="keep ratio in (0,1]")
    common(mp, checkpoint=True)
    common(sub.add_parser("finetune", help="recover quality of a slim checkpoint"),
           data=True, checkpoint=True)
    common(sub.add_parser("eval", help="RD report over an image directory"),
           data=True, checkpoint=True)
    mv = sub.add_parser("merge-verify", help="randomized merge-exactness oracles")
    mv.add_argument("--seed", type=int, default=0)
    rp = sub.add_parser("report", help="comparison table from RD report CSVs")
    rp.add_argument("csvs", nargs="+", help="RD report CSV files (first is baseline)")
    rp.add_argument("--out", required=True)
    return p


def _load_cfg(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _restore(cfg: Config, path: str):
    net = build_hyperprior(cfg)
    return load_checkpoint(net, path)


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    net = build_hyperprior(cfg)
    sampler = load_images(args.data_dir, patch=cfg.patch_size, seed=cfg.seed)
    losses = pretrain(net, sampler, PruneConfig.from_config(cfg), cfg.pretrain_steps)
    dest = os.path.join(out, "pretrained.hpck")
    save_checkpoint(net, dest)
    tail = float(np.mean(losses[-50:])) if losses else float("nan")
    print(f"pretrained {cfg.pretrain_steps} steps: loss {losses[0]:.6f} -> {tail:.6f}")
    print(f"wrote {dest}")
    return 0


def cmd_prune(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    net = _restore(cfg, args.checkpoint)
    sampler = load_images(args.data_dir, patch=cfg.patch_size, seed=cfg.seed)
    before = count_parameters(net, "hyper-path")
    net, state = run_prune_pipeline(net, sampler, PruneConfig.from_config(cfg))
    after = count_parameters(net, "hyper-path")
    dest = os.path.join(out, "pruned_merged.hpck")
    save_checkpoint(net, dest)
    hist = os.path.join(out, "prune_history.csv")
    with open(hist, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(state.history_rows) + "\n")
    print(f"hyper-path parameters {before} -> {after} "
          f"({100.0 * (1 - after / before):.1f}% reduction)")
    print(f"wrote {dest}")
    print(f"wrote {hist}")
    return 0


def cmd_manual_prune(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    net = _restore(cfg, args.checkpoint)
    before = count_parameters(net, "hyper-path")
    manual_uniform_prune(net, args.ratio)
    after = count_parameters(net, "hyper-path")
    dest = os.path.join(out, "manual_pruned.hpck")
    save_checkpoint(net, dest)
    print(f"hyper-path parameters {before} -> {after} at keep ratio {args.ratio}")
    print(f"wrote {dest}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    net = _restore(cfg, args.checkpoint)
    net.set_frozen(MAIN_PATHS, True)
    sampler = load_images(args.data_dir, patch=cfg.patch_size, seed=cfg.seed)
    finetune(net, sampler, PruneConfig.from_config(cfg), cfg.finetune_steps)
    dest = os.path.join(out, "finetuned.hpck")
    save_checkpoint(net, dest)
    print(f"finetuned {cfg.finetune_steps} steps")
    print(f"wrote {dest}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(args)
    net = _restore(cfg, args.checkpoint)
    images = load_images(args.data_dir)
    tag = os.path.splitext(os.path.basename(args.checkpoint))[0]
    report = evaluate_model(net, images, tag)
    dest = os.path.join(out, "report.csv")
    write_report_csv([report], dest)
    ratios = ratio_report(net, images)
    print(f"model={tag} psnr={report.psnr_db:.6f} bpp={report.bpp_total:.6f} "
          f"(y={report.bpp_y:.6f}, z={report.bpp_z:.6f})")
    print(f"params total={report.params_total} hyper={report.params_hyper} "
          f"hyper_ratio={ratios['hyper_param_ratio']:.6f} "
          f"z_rate_ratio={ratios['z_rate_ratio']:.6f}")
    print(f"wrote {dest}")
    return 0


def cmd_merge_verify(args) -> int:
    results = merge_verify(args.seed)
    ok = True
    for name, err in results.items():
        status = "ok" if err <= MERGE_TOLERANCE else "FAIL"
        ok &= err <= MERGE_TOLERANCE
        print(f"{name}: max relative error {err:.3e} [{status}]")
    if not ok:
        print(f"merge verification exceeded tolerance {MERGE_TOLERANCE:.0e}",
              file=sys.stderr)
        return 2
    return 0


def cmd_report(args) -> int:
    reports = []
    for path in args.csvs:
        reports.extend(read_report_csv(path))
    csv_text, table = compare_models(reports)
    out = _outdir(args)
    with open(os.path.join(out, "compare.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(csv_text)
    with open(os.path.join(out, "compare.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(table)
    print(table, end="")
    print(f"wrote {os.path.join(out, 'compare.csv')}")
    return 0


_COMMANDS = {
    "pretrain": cmd_pretrain,
    "prune": cmd_prune,
    "manual-prune": cmd_manual_prune,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "merge-verify": cmd_merge_verify,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"hyperslim: error: {e}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except VALIDATION_ERRORS as e:
        print(f"hyperslim: error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"hyperslim: runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
