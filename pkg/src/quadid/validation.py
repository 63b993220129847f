"""Residual analysis and model comparison for the two eliminator stages.

Stage 1 gates on fit percentages against training plus two validation
records and on residual whiteness/causality against 99% confidence
bounds; stage 2 ranks the survivors by the RMSE between each model's
closed-loop response and the plant's logged response under the same
input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control import CascadeConfig, closedloop_simulate
from .datalog import DataLog
from .errors import DataError, DivergenceError, PipelineError, ConfigError
from .estimation import (Dataset, PolyModel, fit_percent, model_aic,
                         prediction_fit, prediction_residuals,
                         simulation_fit)
from .signals import Signal, fmt_float


@dataclass
class ResidualReport:
    """Correlogram fragments with their 99% band and verdicts.

    autocorr holds lags 1..L; crosscorr holds lags -L..L.  A test's
    verdict is None until its fragment is computed.  `degenerate` marks
    residuals too small to analyse (trivially passing).
    """

    bound: float
    max_lag: int
    autocorr: np.ndarray | None = None
    crosscorr: np.ndarray | None = None
    whiteness_pass: bool | None = None
    causality_pass: bool | None = None
    adequacy_pass: bool | None = None
    whiteness_fraction_outside: float | None = None
    causality_fraction_outside: float | None = None
    adequacy_fraction_outside: float | None = None
    degenerate: bool = False

    def merged_with(self, other: "ResidualReport") -> "ResidualReport":
        out = ResidualReport(bound=self.bound, max_lag=self.max_lag)
        for src in (self, other):
            for name in ("autocorr", "crosscorr", "whiteness_pass",
                         "causality_pass", "adequacy_pass",
                         "whiteness_fraction_outside",
                         "causality_fraction_outside",
                         "adequacy_fraction_outside"):
                v = getattr(src, name)
                if v is not None:
                    setattr(out, name, v)
            out.degenerate = out.degenerate or src.degenerate
        return out


#: z-value of the two-sided 99% confidence band for a normalized
#: correlation of white residuals.
Z99 = 2.58

#: A test passes when at most this fraction of its lags leaves the band,
#: matching the band's nominal exceedance under the null.
OUTSIDE_FRACTION = 0.05


def residual_autocorr(e: Signal, max_lag: int,
                      degenerate_tol: float = 1e-12) -> ResidualReport:
    """Normalized residual autocorrelation at lags 1..max_lag.

    Residuals whose RMS falls below degenerate_tol are flagged and pass
    trivially (nothing left to correlate).
    """
    x = e.samples
    n = len(x)
    if n <= 10 * max_lag:
        raise DataError(
            f"{n} residuals are too few for {max_lag} lags (need > {10 * max_lag})")
    bound = Z99 / math.sqrt(n)
    denom = float(x @ x)
    if math.sqrt(denom / n) <= degenerate_tol:
        return ResidualReport(bound=bound, max_lag=max_lag,
                              autocorr=np.zeros(max_lag),
                              whiteness_pass=True,
                              whiteness_fraction_outside=0.0,
                              degenerate=True)
    r = np.array([float(x[k:] @ x[:n - k]) / denom
                  for k in range(1, max_lag + 1)])
    frac = float(np.mean(np.abs(r) > bound))
    return ResidualReport(bound=bound, max_lag=max_lag, autocorr=r,
                          whiteness_pass=frac <= OUTSIDE_FRACTION,
                          whiteness_fraction_outside=frac)


def residual_crosscorr(u: Signal, e: Signal, max_lag: int) -> ResidualReport:
    """Normalized input/residual cross-correlation at lags -max_lag..max_lag.

    Causality is judged on the negative lags only (future input must not
    explain the residual); model adequacy on the non-negative lags.
    """
    if len(u) != len(e):
        raise DataError(f"length mismatch: u {len(u)} vs e {len(e)}")
    x = u.samples
    y = e.samples
    n = len(y)
    if n <= 10 * max_lag:
        raise DataError(
            f"{n} samples are too few for {max_lag} lags (need > {10 * max_lag})")
    su = float(x @ x)
    se = float(y @ y)
    if su == 0.0 or se == 0.0:
        raise DataError("zero-variance input or residual signal")
    denom = math.sqrt(su * se)
    bound = Z99 / math.sqrt(n)

    lags = np.arange(-max_lag, max_lag + 1)
    r = np.empty(len(lags))
    for i, k in enumerate(lags):
        if k >= 0:
            r[i] = float(y[k:] @ x[:n - k]) / denom
        else:
            r[i] = float(y[:n + k] @ x[-k:]) / denom
    neg = r[:max_lag]
    nonneg = r[max_lag:]
    frac_neg = float(np.mean(np.abs(neg) > bound))
    frac_nonneg = float(np.mean(np.abs(nonneg) > bound))
    return ResidualReport(
        bound=bound, max_lag=max_lag, crosscorr=r,
        causality_pass=frac_neg <= OUTSIDE_FRACTION,
        adequacy_pass=frac_nonneg <= OUTSIDE_FRACTION,
        causality_fraction_outside=frac_neg,
        adequacy_fraction_outside=frac_nonneg,
    )


def analyze_residuals(m: PolyModel, d: Dataset, max_lag: int,
                      degenerate_rel_tol: float = 1e-10) -> ResidualReport:
    """Full residual report of a model's one-step residuals on a dataset.

    The degenerate threshold scales with the output RMS: residuals ten
    orders of magnitude below the signal carry no usable correlation
    structure and pass trivially, flagged.
    """
    e = prediction_residuals(m, d)
    start = len(d) - len(e)
    y_rms = float(np.sqrt(np.mean(d.y.samples ** 2)))
    tol = degenerate_rel_tol * max(y_rms, 1e-300)
    auto = residual_autocorr(e, max_lag, degenerate_tol=tol)
    if auto.degenerate:
        report = ResidualReport(bound=auto.bound, max_lag=max_lag,
                                autocorr=auto.autocorr,
                                crosscorr=np.zeros(2 * max_lag + 1),
                                whiteness_pass=True, causality_pass=True,
                                adequacy_pass=True,
                                whiteness_fraction_outside=0.0,
                                causality_fraction_outside=0.0,
                                adequacy_fraction_outside=0.0,
                                degenerate=True)
        return report
    u_aligned = Signal(d.u.samples[start:], d.sample_time, label=d.u.label)
    cross = residual_crosscorr(u_aligned, e, max_lag)
    return auto.merged_with(cross)


@dataclass
class StageThresholds:
    """Eliminator gates; the fit levels are reverse-engineered so the
    reference comparison table's passers pass and its failers fail."""

    train_fit: float = 95.0
    val_fit: float = 55.0
    max_lag: int = 25
    stage2_rmse_frac: float = 0.10
    degenerate_rel_tol: float = 1e-10


@dataclass
class ComparisonRow:
    """One candidate's scores across both eliminator stages."""

    candidate: str
    validation_prbs_fit: float
    validation_square_fit: float
    training_fit: float
    stage2_pass: bool
    stage1_pass: bool
    rmse: float
    mse: float
    aic: float
    whiteness_pass: bool
    causality_pass: bool
    residual_degenerate: bool


def _safe_sim_fit(m: PolyModel, d: Dataset) -> float:
    try:
        return simulation_fit(m, d)
    except (DivergenceError, DataError):
        return -math.inf


def _safe_pred_fit(m: PolyModel, d: Dataset) -> float:
    try:
        return prediction_fit(m, d)
    except (DivergenceError, DataError):
        return -math.inf


def stage2_rmse(m: PolyModel, cascade: CascadeConfig, plant_log: DataLog,
                trim_seconds: float = 0.0) -> float:
    """RMSE between the model's closed-loop response and the plant's
    logged response under the identical injected input."""
    refs = plant_log.column("r")
    dist = plant_log.column("d_s")
    sim = closedloop_simulate(m, cascade, refs, dist, channel=plant_log.channel)
    k = int(round(trim_seconds * plant_log.sample_rate_hz))
    err = sim.y_rate[k:] - plant_log.y_rate[k:]
    return float(np.sqrt(np.mean(err ** 2)))


def compare_models(candidates: dict[str, PolyModel], training: Dataset,
                   validation_prbs: Dataset, validation_square: Dataset,
                   plant_log: DataLog, cascade: CascadeConfig,
                   thresholds: StageThresholds | None = None,
                   stage2_trim_seconds: float = 0.0,
                   ) -> tuple[list[ComparisonRow], dict[str, ResidualReport]]:
    """Score every candidate on both eliminator stages.

    Returns rows sorted with stage-1 passers first in ascending stage-2
    RMSE (ties broken by candidate id), non-passers after by id, plus
    each candidate's residual report on the training record.
    """
    if not candidates:
        raise PipelineError("empty candidate set")
    th = thresholds or StageThresholds()
    rate_rms = float(np.sqrt(np.mean(plant_log.y_rate ** 2)))

    rows = []
    reports = {}
    for cid in sorted(candidates):
        m = candidates[cid]
        # training fit is the one-step predictor's fit to the estimation
        # data; the validation columns are infinite-horizon simulation fits
        train_fit = _safe_pred_fit(m, training)
        prbs_fit = _safe_sim_fit(m, validation_prbs)
        square_fit = _safe_sim_fit(m, validation_square)
        report = analyze_residuals(m, training, th.max_lag,
                                   th.degenerate_rel_tol)
        reports[cid] = report
        stage1 = (train_fit >= th.train_fit
                  and prbs_fit >= th.val_fit
                  and square_fit >= th.val_fit
                  and bool(report.whiteness_pass)
                  and bool(report.causality_pass))
        rmse = math.nan
        stage2 = False
        if stage1:
            try:
                rmse = stage2_rmse(m, cascade, plant_log, stage2_trim_seconds)
                stage2 = rmse <= th.stage2_rmse_frac * rate_rms
            except (DivergenceError, ConfigError):
                rmse = math.inf
        rows.append(ComparisonRow(
            candidate=cid,
            validation_prbs_fit=prbs_fit,
            validation_square_fit=square_fit,
            training_fit=train_fit,
            stage2_pass=stage2,
            stage1_pass=stage1,
            rmse=rmse,
            mse=rmse ** 2 if math.isfinite(rmse) else rmse,
            aic=model_aic(m, training),
            whiteness_pass=bool(report.whiteness_pass),
            causality_pass=bool(report.causality_pass),
            residual_degenerate=report.degenerate,
        ))

    passers = [r for r in rows if r.stage1_pass]
    others = [r for r in rows if not r.stage1_pass]
    passers.sort(key=lambda r: (r.rmse, r.candidate))
    others.sort(key=lambda r: r.candidate)
    return passers + others, reports


COMPARISON_COLUMNS = (
    "candidate", "validation_prbs_fit", "validation_square_fit",
    "training_fit", "stage2_pass", "stage1_pass", "rmse", "mse", "aic",
    "whiteness_pass", "causality_pass", "residual_degenerate",
)


def write_comparison_csv(path, rows: list[ComparisonRow],
                         config_hash: str = "") -> None:
    """Comparison table, leading columns in the reference table's order."""
    lines = ["# quadid-comparison v1", f"# config_hash = {config_hash}",
             ",".join(COMPARISON_COLUMNS)]
    for r in rows:
        vals = []
        for col in COMPARISON_COLUMNS:
            v = getattr(r, col)
            if isinstance(v, bool):
                vals.append("true" if v else "false")
            elif isinstance(v, str):
                vals.append(v)
            else:
                vals.append(fmt_float(v))
        lines.append(",".join(vals))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_comparison_csv(path) -> tuple[list[ComparisonRow], str]:
    """Read a comparison table back; returns (rows, config_hash)."""
    config_hash = ""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("config_hash"):
                    config_hash = body.split("=", 1)[1].strip()
                continue
            if line.startswith("candidate,"):
                continue
            vals = line.split(",")
            kwargs = {}
            for col, v in zip(COMPARISON_COLUMNS, vals):
                if col == "candidate":
                    kwargs[col] = v
                elif v in ("true", "false"):
                    kwargs[col] = v == "true"
                else:
                    kwargs[col] = float(v)
            rows.append(ComparisonRow(**kwargs))
    if not rows:
        raise DataError(f"{path}: no comparison rows")
    return rows, config_hash
