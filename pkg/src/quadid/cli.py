"""Batch command-line interface.

Subcommands: prbs-design, simulate, identify, validate, retune, report.
Every flag mirrors a config key; --set section.key=value reaches any of
them.  Exit code 0 only on full success.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .config import FullConfig, load_config
from .datalog import read_log_csv, write_log_csv
from .errors import QuadIdError
from .estimation import load_model, save_model
from .excitation import ExcitationBand, design_prbs, generate_prbs
from .pipeline import (dataset_from_log, identify, parse_grid, retune,
                       run_experiment, write_retune_csv)
from .reporting import (COMPARISON_FILE, RETUNE_FILE, TRAIN_LOG, WINNER_MODEL,
                        report)
from .signals import fmt_float, write_signal_csv
from .validation import (analyze_residuals, read_comparison_csv,
                         write_comparison_csv)
from .estimation import fit_percent, simulate_model
from . import plots


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (key = value sections)")
    p.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL",
                   help="override any config key, e.g. experiment.seed=7")
    p.add_argument("--channel", choices=("roll", "pitch", "yaw"),
                   help="shortcut for experiment.channel")
    p.add_argument("--seed", type=int, help="shortcut for experiment.seed")


def _load_cfg(args) -> FullConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise QuadIdError(f"--set needs SEC.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "channel", None):
        overrides["experiment.channel"] = args.channel
    if getattr(args, "seed", None) is not None:
        overrides["experiment.seed"] = str(args.seed)
    if getattr(args, "grid", None):
        overrides["identify.grid"] = args.grid
    return load_config(args.config, overrides)


def _cmd_prbs_design(args) -> int:
    band = ExcitationBand(args.omega_min, args.omega_max)
    cfg = design_prbs(band, args.amplitude, args.gain_factor)
    print(f"n_bits = {cfg.n_bits}")
    print(f"taps = {','.join(str(t) for t in cfg.taps)}")
    print(f"N = {cfg.N}")
    print(f"delta_t = {fmt_float(cfg.delta_t)}")
    print(f"T = {fmt_float(cfg.T)}")
    print(f"amplitude = {fmt_float(cfg.amplitude)}")
    if args.out:
        duration = args.duration if args.duration else cfg.T
        sig = generate_prbs(cfg, duration, 1.0 / args.sample_rate)
        write_signal_csv(args.out, sig)
        print(f"wrote {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    log = run_experiment(cfg, kind=args.kind,
                         duration=args.duration if args.duration else None)
    write_log_csv(args.out, log)
    print(f"wrote {args.out} ({len(log)} rows, channel {log.channel}, "
          f"{log.loop_mode} loop, hash {log.config_hash})")
    return 0


def _cmd_identify(args) -> int:
    cfg = _load_cfg(args)
    train = read_log_csv(args.train)
    val_prbs = read_log_csv(args.val_prbs)
    val_square = read_log_csv(args.val_square)
    result = identify(train, val_prbs, val_square,
                      grid=parse_grid(cfg.identify.grid),
                      cascade=cfg.cascade(),
                      thresholds=cfg.identify.thresholds(),
                      trim_seconds=cfg.experiment.trim_seconds,
                      max_persistency=cfg.identify.max_persistency)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_comparison_csv(out_dir / COMPARISON_FILE, result.rows,
                         result.config_hash)
    save_model(out_dir / WINNER_MODEL, result.winner)
    for note in result.notes:
        print(f"note: {note}", file=sys.stderr)
    print(f"persistency order: {result.persistency}")
    for row in result.rows:
        mark = "**" if row.candidate == result.winner_id else "  "
        print(f"{mark} {row.candidate:<14} train {row.training_fit:7.2f}%  "
              f"prbs {row.validation_prbs_fit:7.2f}%  "
              f"square {row.validation_square_fit:7.2f}%  "
              f"stage1 {'pass' if row.stage1_pass else 'fail'}  "
              f"rmse {row.rmse:.5g}")
    print(f"winner: {result.winner_id} -> {out_dir / WINNER_MODEL}")
    return 0


def _cmd_validate(args) -> int:
    cfg = _load_cfg(args)
    model = load_model(args.model)
    log = read_log_csv(args.log)
    data = dataset_from_log(log, cfg.experiment.trim_seconds, "validation")
    y_sim = simulate_model(model, data.u)
    fit = fit_percent(data.y, y_sim)
    rep = analyze_residuals(model, data, cfg.identify.max_lag)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .reporting import write_correlogram_csvs
    write_correlogram_csvs(out_dir, rep, log.config_hash)
    plots.render_correlogram(out_dir / "correlogram.png", rep,
                             title=model.order_tag())
    print(f"simulation fit: {fit:.2f}%")
    print(f"whiteness: {'pass' if rep.whiteness_pass else 'fail'}"
          f"{' (degenerate)' if rep.degenerate else ''}")
    print(f"causality: {'pass' if rep.causality_pass else 'fail'}")
    return 0


def _cmd_retune(args) -> int:
    cfg = _load_cfg(args)
    model = load_model(args.model)
    result = retune(model, cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_retune_csv(out_dir / RETUNE_FILE, result, cfg.config_hash())
    print(f"baseline cost {result.baseline_cost:.5g} -> "
          f"tuned cost {result.tuned_cost:.5g}")
    g = result.tuned
    print(f"tuned gains: outer kp={g.outer.kp}  inner kp={g.inner.kp} "
          f"ki={g.inner.ki} kd={g.inner.kd}")
    if result.lqr is not None:
        print(f"LQR: residual {result.lqr.residual:.3g}, "
              f"spectral radius {result.lqr.spectral_radius:.4f}")
    elif result.lqr_note:
        print(result.lqr_note, file=sys.stderr)
    print(f"wrote {out_dir / RETUNE_FILE}")
    return 0


def _cmd_report(args) -> int:
    cfg = _load_cfg(args)
    in_dir = Path(args.in_dir)
    winner = load_model(in_dir / WINNER_MODEL)
    rows, config_hash = read_comparison_csv(in_dir / COMPARISON_FILE)
    train_log = read_log_csv(in_dir / TRAIN_LOG)
    retune_csv = in_dir / RETUNE_FILE
    out_dir = args.out_dir if args.out_dir else in_dir / "reports"
    files = report(out_dir, winner=winner, rows=rows, train_log=train_log,
                   retune_csv=retune_csv if retune_csv.exists() else None,
                   max_lag=cfg.identify.max_lag,
                   trim_seconds=cfg.experiment.trim_seconds,
                   config_hash=config_hash)
    for f in files:
        print(f"wrote {f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadid",
        description="Closed-loop attitude identification workbench: simulate, "
                    "excite, identify, validate, and re-tune.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prbs-design", help="size a PRBS for a frequency band")
    p.add_argument("--omega-min", type=float, default=0.1)
    p.add_argument("--omega-max", type=float, default=20.0)
    p.add_argument("--gain-factor", type=float, default=4.0)
    p.add_argument("--amplitude", type=float, default=20.0)
    p.add_argument("--duration", type=float, default=0.0,
                   help="signal length to emit (default: one period)")
    p.add_argument("--sample-rate", type=float, default=250.0)
    p.add_argument("--out", help="write the sampled signal CSV here")
    p.set_defaults(func=_cmd_prbs_design)

    p = sub.add_parser("simulate", help="run one excitation experiment")
    _add_config_args(p)
    p.add_argument("--kind", choices=("prbs", "square"), default=None)
    p.add_argument("--duration", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("identify", help="run the candidate grid on logged data")
    _add_config_args(p)
    p.add_argument("--grid", help="candidate grid, e.g. "
                   "'ARX 331, IV 5-5-4' or 'na=2..10,nb=1..10,nk=1..8'")
    p.add_argument("--train", required=True)
    p.add_argument("--val-prbs", required=True)
    p.add_argument("--val-square", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_identify)

    p = sub.add_parser("validate", help="residual analysis of a model on a log")
    _add_config_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("retune", help="re-tune controllers on a model")
    _add_config_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_retune)

    p = sub.add_parser("report", help="render CSV + figure reports")
    _add_config_args(p)
    p.add_argument("--in-dir", required=True,
                   help="directory with logs, comparison table, and models")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except QuadIdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
