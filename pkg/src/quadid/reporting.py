"""Report emission and end-to-end campaign orchestration.

Reports are CSVs plus rendered PNG figures: the comparison table, the
winner's residual correlograms with their 99% band, a Bode grid over
the excited band, and the before/after re-tuning traces.  Every CSV
carries the configuration hash of the run that produced it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plots
from .config import FullConfig, write_config
from .datalog import DataLog, read_log_csv, write_log_csv
from .errors import DataError, PipelineError
from .estimation import PolyModel, bode_arrays, save_model
from .pipeline import (IdentificationResult, RetuneResult, dataset_from_log,
                       identify, parse_grid, read_retune_csv, retune,
                       run_experiment, write_retune_csv)
from .sensing import power_spectrum
from .signals import fmt_float
from .validation import (ComparisonRow, ResidualReport, analyze_residuals,
                         write_comparison_csv)

BODE_OMEGA_MIN = 0.1
BODE_OMEGA_MAX = 20.0
BODE_POINTS = 121

TRAIN_LOG = "train_log.csv"
VAL_PRBS_LOG = "val_prbs_log.csv"
VAL_SQUARE_LOG = "val_square_log.csv"
COMPARISON_FILE = "comparison.csv"
WINNER_MODEL = "winner_model.txt"
RETUNE_FILE = "retune_traces.csv"


def bode_grid(omega_min: float = BODE_OMEGA_MIN,
              omega_max: float = BODE_OMEGA_MAX,
              points: int = BODE_POINTS) -> np.ndarray:
    return np.logspace(math.log10(omega_min), math.log10(omega_max), points)


def write_bode_csv(path, omegas, mag_db, phase_deg, config_hash="") -> None:
    lines = ["# quadid-bode v1", f"# config_hash = {config_hash}",
             "omega_rad_s,magnitude_db,phase_deg"]
    for w, m, p in zip(omegas, mag_db, phase_deg):
        lines.append(f"{fmt_float(w)},{fmt_float(m)},{fmt_float(p)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_correlogram_csvs(report_dir: Path, report: ResidualReport,
                           config_hash="") -> list[str]:
    out = []
    path = report_dir / "residual_autocorr.csv"
    lines = ["# quadid-correlogram v1", f"# config_hash = {config_hash}",
             f"# bound = {fmt_float(report.bound)}", "lag,autocorr,bound"]
    for k, v in enumerate(report.autocorr, start=1):
        lines.append(f"{k},{fmt_float(v)},{fmt_float(report.bound)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    out.append(str(path))

    if report.crosscorr is not None:
        path = report_dir / "residual_crosscorr.csv"
        lines = ["# quadid-correlogram v1", f"# config_hash = {config_hash}",
                 f"# bound = {fmt_float(report.bound)}", "lag,crosscorr,bound"]
        for k, v in zip(range(-report.max_lag, report.max_lag + 1),
                        report.crosscorr):
            lines.append(f"{k},{fmt_float(v)},{fmt_float(report.bound)}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        out.append(str(path))
    return out


def report(report_dir, *, winner: PolyModel, rows: list[ComparisonRow],
           train_log: DataLog, retune_result: RetuneResult | None = None,
           retune_csv=None, max_lag: int = 25, trim_seconds: float = 2.0,
           config_hash: str = "") -> list[str]:
    """Write the report CSVs and figures for a completed run.

    Re-tuning traces come either from a live RetuneResult or from a
    previously written traces CSV (copied verbatim).
    """
    if not rows:
        raise PipelineError("empty candidate set: nothing to report")
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    files: list[str] = []

    comparison = report_dir / COMPARISON_FILE
    write_comparison_csv(comparison, rows, config_hash)
    files.append(str(comparison))

    train = dataset_from_log(train_log, trim_seconds, "training")
    residual_report = analyze_residuals(winner, train, max_lag)
    files += write_correlogram_csvs(report_dir, residual_report, config_hash)
    files.append(plots.render_correlogram(report_dir / "correlogram.png",
                                          residual_report, title="winner"))

    omegas = bode_grid()
    mag_db, phase_deg = bode_arrays(winner, omegas)
    bode_csv = report_dir / "bode.csv"
    write_bode_csv(bode_csv, omegas, mag_db, phase_deg, config_hash)
    files.append(str(bode_csv))
    files.append(plots.render_bode(report_dir / "bode.png", omegas, mag_db,
                                   phase_deg, title="winner frequency response"))

    files.append(plots.render_log_overview(report_dir / "train_overview.png",
                                           train_log))
    freqs, psd = power_spectrum(train_log.column("y_rate"))
    files.append(plots.render_psd(report_dir / "psd.png", freqs, psd,
                                  title="measured rate spectrum"))

    if retune_result is not None:
        traces = report_dir / "traces_before_after.csv"
        write_retune_csv(traces, retune_result, config_hash)
        files.append(str(traces))
        files.append(plots.render_traces(
            report_dir / "traces.png", retune_result.trace_t,
            retune_result.trace_r, retune_result.angle_before,
            retune_result.angle_after, retune_result.angle_lqr,
            title="closed-loop step response before/after re-tune"))
    elif retune_csv is not None:
        traces = report_dir / "traces_before_after.csv"
        traces.write_text(Path(retune_csv).read_text(encoding="utf-8"),
                          encoding="utf-8")
        files.append(str(traces))
        _, cols = read_retune_csv(retune_csv)
        files.append(plots.render_traces(
            report_dir / "traces.png", cols["t"], cols["r"],
            cols["angle_before"], cols["angle_after"], cols.get("angle_lqr"),
            title="closed-loop step response before/after re-tune"))
    return files


@dataclass
class CampaignResult:
    out_dir: Path
    identification: IdentificationResult
    retune_result: RetuneResult
    files: list[str] = field(default_factory=list)


def run_campaign(cfg: FullConfig, out_dir) -> CampaignResult:
    """Full reproduction: three experiments, identification, re-tune, report.

    The validation PRBS record uses fresh generator and register seeds;
    the square record replaces the excitation form, mirroring the two
    validation columns of the comparison table.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: list[str] = []

    write_config(out_dir / "config.ini", cfg)
    files.append(str(out_dir / "config.ini"))

    seed = cfg.experiment.seed
    train_log = run_experiment(cfg)
    val_prbs_log = run_experiment(
        cfg, seed=seed + 1, lfsr_seed=cfg.excitation.lfsr_seed + 1,
        duration=cfg.identify.val_prbs_duration_s)
    val_square_log = run_experiment(
        cfg, kind="square", seed=seed + 2,
        duration=cfg.identify.val_square_duration_s)
    for name, log in ((TRAIN_LOG, train_log), (VAL_PRBS_LOG, val_prbs_log),
                      (VAL_SQUARE_LOG, val_square_log)):
        write_log_csv(out_dir / name, log)
        files.append(str(out_dir / name))

    ident = identify(train_log, val_prbs_log, val_square_log,
                     grid=parse_grid(cfg.identify.grid),
                     cascade=cfg.cascade(),
                     thresholds=cfg.identify.thresholds(),
                     trim_seconds=cfg.experiment.trim_seconds,
                     max_persistency=cfg.identify.max_persistency)

    write_comparison_csv(out_dir / COMPARISON_FILE, ident.rows,
                         ident.config_hash)
    files.append(str(out_dir / COMPARISON_FILE))
    save_model(out_dir / WINNER_MODEL, ident.winner)
    files.append(str(out_dir / WINNER_MODEL))
    for row in ident.rows:
        if row.stage1_pass:
            name = f"model_{row.candidate.replace(' ', '_')}.txt"
            save_model(out_dir / name, ident.models[row.candidate])
            files.append(str(out_dir / name))

    retune_result = retune(ident.winner, cfg)
    retune_result.config_hash = ident.config_hash
    write_retune_csv(out_dir / RETUNE_FILE, retune_result, ident.config_hash)
    files.append(str(out_dir / RETUNE_FILE))

    files += report(out_dir / "reports", winner=ident.winner, rows=ident.rows,
                    train_log=train_log, retune_result=retune_result,
                    max_lag=cfg.identify.max_lag,
                    trim_seconds=cfg.experiment.trim_seconds,
                    config_hash=ident.config_hash)
    return CampaignResult(out_dir=out_dir, identification=ident,
                          retune_result=retune_result, files=files)
