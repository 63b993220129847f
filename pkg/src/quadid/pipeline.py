"""Batch orchestration: run excitation experiments, identify, re-tune, report.

An experiment simulates the nonlinear plant on one attitude channel with
the other rotational axes locked (the software analogue of a fixed-axis
test rig), injects the excitation at the controller output, and logs the
measured signals at the control rate.  Identification runs the candidate
grid through both eliminator stages; re-tuning searches PID gains
against the winning model and designs an LQR gain on its realization.
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FullConfig
from .control import (CascadeConfig, CascadeState, LqrResult, PidGains,
                      cascade_step, closedloop_simulate, lqr_design,
                      poly_to_statespace)
from .datalog import DataLog, read_log_csv, write_log_csv
from .errors import (ConfigError, DataError, DesignError, DivergenceError,
                     DomainError, EstimationError, IdentifiabilityError,
                     PipelineError, RetuneError)
from .estimation import (Dataset, PolyModel, detrend, estimate_armax,
                         estimate_arx, estimate_iv, save_model)
from .excitation import generate_prbs, persistency_order, square_wave
from .plant import ControlVector, State, motor_step, step_rk4, trim_hover
from .sensing import LowPass, accel_angles, complementary, sample_imu
from .signals import Signal, fmt_float
from .validation import (ComparisonRow, ResidualReport, StageThresholds,
                         compare_models, write_comparison_csv)

_CHANNEL_AXES = {"roll": 0, "pitch": 1, "yaw": 2}


def _lock_axes(s: State, channel: str) -> State:
    """Zero the angles and rates of the non-excited rotational axes."""
    if channel == "roll":
        return State(s.x, s.y, s.z, s.vx, s.vy, s.vz,
                     s.phi, 0.0, 0.0, s.p, 0.0, 0.0, s.w1, s.w2, s.w3, s.w4)
    if channel == "pitch":
        return State(s.x, s.y, s.z, s.vx, s.vy, s.vz,
                     0.0, s.theta, 0.0, 0.0, s.q, 0.0, s.w1, s.w2, s.w3, s.w4)
    return State(s.x, s.y, s.z, s.vx, s.vy, s.vz,
                 0.0, 0.0, s.psi, 0.0, 0.0, s.r, s.w1, s.w2, s.w3, s.w4)


def _excitation_signal(cfg: FullConfig, kind: str, duration: float,
                       lfsr_seed: int, sample_time: float) -> Signal:
    if kind == "prbs":
        prbs = cfg.prbs()
        prbs.seed = lfsr_seed
        return generate_prbs(prbs, duration, sample_time)
    if kind == "square":
        return square_wave(cfg.excitation.square_period_s,
                           cfg.resolved_amplitude(), duration, sample_time)
    raise ConfigError(f"unknown excitation kind {kind!r}")


def _default_duration(cfg: FullConfig, kind: str) -> float:
    if cfg.experiment.duration_s > 0:
        return cfg.experiment.duration_s
    if kind == "prbs":
        return cfg.prbs().T
    return 6.0 * cfg.excitation.square_period_s


@dataclass
class ExperimentTrace:
    """Optional true-state probe alongside a DataLog (diagnostics only)."""

    states: list[State] = field(default_factory=list)


def run_experiment(cfg: FullConfig, *, kind: str | None = None,
                   duration: float | None = None, seed: int | None = None,
                   lfsr_seed: int | None = None,
                   trace: ExperimentTrace | None = None) -> DataLog:
    """Simulate one fixed-axis excitation experiment and log it.

    The excited channel runs under the cascade (or open loop for yaw by
    default) with the excitation added at the controller output; the
    other rotational axes are locked to zero each step.  The run aborts
    if the true attitude angle exceeds the configured cap.  Bit
    reproducible for a fixed configuration and seed.
    """
    exp = cfg.experiment
    kind = kind or cfg.excitation.kind
    duration = duration if duration is not None else _default_duration(cfg, kind)
    seed = exp.seed if seed is None else seed
    lfsr_seed = cfg.excitation.lfsr_seed if lfsr_seed is None else lfsr_seed
    channel = exp.channel
    loop_mode = exp.resolved_loop_mode()

    run_cfg = copy.deepcopy(cfg)
    run_cfg.experiment.seed = seed
    run_cfg.experiment.duration_s = duration
    run_cfg.excitation.kind = kind
    run_cfg.excitation.lfsr_seed = lfsr_seed
    config_hash = run_cfg.config_hash()

    dt_c = 1.0 / cfg.sensor.sample_rate_hz
    substeps = max(1, int(round(dt_c / exp.plant_dt)))
    dt_p = dt_c / substeps
    n_steps = int(round(duration / dt_c))
    if n_steps < 2:
        raise ConfigError(f"duration {duration} s gives only {n_steps} steps")

    d_sig = _excitation_signal(cfg, kind, duration, lfsr_seed, dt_c)
    d = d_sig.samples
    if len(d) < n_steps:
        d = np.pad(d, (0, n_steps - len(d)), mode="edge")

    params = cfg.plant
    cascade = cfg.cascade()
    cap = math.radians(exp.angle_cap_deg)
    rng = np.random.default_rng(seed)

    state, trim_u = trim_hover(params)
    axis = _CHANNEL_AXES[channel]
    rate_lpf = LowPass(cfg.sensor.lpf_cutoff_hz, cfg.sensor.sample_rate_hz)
    ctrl_state = CascadeState()
    angle_est = 0.0
    u_eff = 0.0  # channel command after the first-order actuator lag

    t = np.arange(n_steps) * dt_c
    r_log = np.zeros(n_steps)
    u_log = np.zeros(n_steps)
    rate_log = np.zeros(n_steps)
    angle_log = np.zeros(n_steps)

    for k in range(n_steps):
        gyro, accel = sample_imu(state, cfg.sensor, rng, g=params.g)
        rate_meas = rate_lpf.step(gyro[axis])
        if channel == "yaw":
            # no magnetometer model: the yaw angle is the integrated rate
            angle_est = angle_est + rate_meas * dt_c
        else:
            roll_acc, pitch_acc = accel_angles(accel)
            acc_angle = roll_acc if channel == "roll" else pitch_acc
            angle_est = complementary(rate_meas, acc_angle, angle_est,
                                      cfg.sensor.cf_alpha, dt_c)

        if loop_mode == "closed":
            u_cmd, ctrl_state = cascade_step(cascade, 0.0, angle_est,
                                             rate_meas, d[k], dt_c, ctrl_state)
        else:
            u_cmd = d[k]

        u_log[k] = u_cmd
        rate_log[k] = rate_meas
        angle_log[k] = angle_est

        for _ in range(substeps):
            u_eff = motor_step(u_eff, u_cmd, params.tau_m, dt_p)
            U = ControlVector(
                U1=trim_u.U1,
                U2=u_eff if channel == "roll" else 0.0,
                U3=u_eff if channel == "pitch" else 0.0,
                U4=u_eff if channel == "yaw" else 0.0,
            )
            state = step_rk4(state, U, dt_p, params)
        state = _lock_axes(state, channel)
        if trace is not None:
            trace.states.append(state)

        true_angle = (state.phi, state.theta, state.psi)[axis]
        if abs(true_angle) > cap:
            raise PipelineError(
                f"attitude cap breached: |{channel}| = "
                f"{math.degrees(abs(true_angle)):.2f} deg > "
                f"{exp.angle_cap_deg} deg at step {k} (t = {t[k]:.3f} s); "
                f"reduce the excitation amplitude")

    return DataLog(config_hash=config_hash, seed=seed,
                   sample_rate_hz=cfg.sensor.sample_rate_hz, channel=channel,
                   axis_lock=True, loop_mode=loop_mode,
                   t=t, r=r_log, d_s=d[:n_steps].copy(), u=u_log,
                   y_rate=rate_log, y_angle=angle_log)


def dataset_from_log(log: DataLog, trim_seconds: float = 0.0,
                     role: str = "training") -> Dataset:
    """Extract the estimation dataset: channel command in, measured rate out."""
    trimmed = log.trimmed(trim_seconds) if trim_seconds > 0 else log
    d = Dataset(u=trimmed.column("u"), y=trimmed.column("y_rate"),
                channel=log.channel, role=role)
    return detrend(d)


@dataclass(frozen=True)
class CandidateSpec:
    """One grid entry: structure plus polynomial orders."""

    structure: str             # ARX | IV | ARMX | BJ
    na: int = 0
    nb: int = 0
    nk: int = 0
    nc: int = 0
    raw: str = ""              # original token for unestimated structures

    @property
    def cid(self) -> str:
        if self.structure == "ARMX":
            return f"ARMX {self.na}{self.nb}{self.nc}{self.nk}"
        if self.structure == "BJ":
            return self.raw or "BJ"
        return f"{self.structure} {self.na}{self.nb}{self.nk}"


def _parse_orders(structure: str, text: str) -> tuple[int, ...]:
    text = text.strip()
    want = 4 if structure == "ARMX" else 3
    if "-" in text:
        parts = [int(p) for p in text.split("-")]
    elif len(text) == want and text.isdigit():
        parts = [int(ch) for ch in text]
    else:
        raise ConfigError(
            f"cannot parse orders {text!r} for {structure}: use {want} single "
            f"digits or hyphen-separated numbers (e.g. 10-10-5)")
    if len(parts) != want:
        raise ConfigError(f"{structure} needs {want} orders, got {parts}")
    return tuple(parts)


def parse_candidate(token: str) -> CandidateSpec:
    token = token.strip()
    parts = token.split()
    if len(parts) != 2:
        raise ConfigError(f"candidate {token!r} must be 'STRUCTURE orders'")
    structure = parts[0].upper()
    if structure == "ARMAX":
        structure = "ARMX"
    if structure == "BJ":
        return CandidateSpec(structure="BJ", raw=token)
    if structure not in ("ARX", "IV", "ARMX"):
        raise ConfigError(f"unknown model structure {parts[0]!r}")
    orders = _parse_orders(structure, parts[1])
    if structure == "ARMX":
        na, nb, nc, nk = orders
        return CandidateSpec(structure, na, nb, nk, nc)
    na, nb, nk = orders
    return CandidateSpec(structure, na, nb, nk)


def _parse_range(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(text)]


def parse_grid(text: str) -> list[CandidateSpec]:
    """Grid grammar: either comma-separated candidate tokens
    ('ARX 331, IV 5-5-4') or an order-range product
    ('na=2..10,nb=1..10,nk=1..8[,nc=1..3][,structures=arx+armax]')."""
    text = text.strip()
    if not text or text == "default":
        from .config import DEFAULT_GRID
        text = DEFAULT_GRID
    if "=" in text:
        ranges = {"na": [2], "nb": [1], "nk": [1], "nc": [1]}
        structures = ["ARX"]
        for item in text.split(","):
            key, value = item.split("=", 1)
            key = key.strip().lower()
            if key == "structures":
                structures = [s.strip().upper() for s in value.split("+")]
                structures = ["ARMX" if s == "ARMAX" else s for s in structures]
            elif key in ranges:
                ranges[key] = _parse_range(value.strip())
            else:
                raise ConfigError(f"unknown grid key {key!r}")
        specs = []
        for s in structures:
            if s not in ("ARX", "IV", "ARMX"):
                raise ConfigError(f"unknown grid structure {s!r}")
            for na in ranges["na"]:
                for nb in ranges["nb"]:
                    for nk in ranges["nk"]:
                        if s == "ARMX":
                            for nc in ranges["nc"]:
                                specs.append(CandidateSpec(s, na, nb, nk, nc))
                        else:
                            specs.append(CandidateSpec(s, na, nb, nk))
        return specs
    return [parse_candidate(tok) for tok in text.split(",") if tok.strip()]


def dedupe_grid(specs: list[CandidateSpec]) -> list[CandidateSpec]:
    seen = set()
    out = []
    for s in specs:
        key = (s.structure, s.na, s.nb, s.nc, s.nk, s.raw)
        if key not in seen:
            seen.add(key)
            out.append(s)
    return out


def estimate_candidate(spec: CandidateSpec, train: Dataset) -> PolyModel:
    if spec.structure == "ARX":
        return estimate_arx(train, spec.na, spec.nb, spec.nk)
    if spec.structure == "IV":
        return estimate_iv(train, spec.na, spec.nb, spec.nk)
    if spec.structure == "ARMX":
        return estimate_armax(train, spec.na, spec.nb, spec.nc, spec.nk)
    raise EstimationError(
        f"{spec.cid}: Box-Jenkins estimation is not implemented; "
        f"the candidate is reported as not estimated")


@dataclass
class IdentificationResult:
    rows: list[ComparisonRow]
    models: dict[str, PolyModel]
    reports: dict[str, ResidualReport]
    winner_id: str
    winner: PolyModel
    persistency: int
    notes: list[str]
    config_hash: str


def identify(train_log: DataLog, val_prbs_log: DataLog,
             val_square_log: DataLog, grid: list[CandidateSpec],
             cascade: CascadeConfig,
             thresholds: StageThresholds | None = None,
             trim_seconds: float = 2.0,
             max_persistency: int = 50) -> IdentificationResult:
    """Run the candidate grid through both eliminator stages.

    Candidates whose combined order exceeds the excitation's persistency
    bound, or whose estimation fails, are reported as not estimated.
    The winner is the stage-1 passer with the lowest stage-2 closed-loop
    RMSE against the validation record.
    """
    th = thresholds or StageThresholds()
    train = dataset_from_log(train_log, trim_seconds, "training")
    val_prbs = dataset_from_log(val_prbs_log, trim_seconds, "validation_prbs")
    val_square = dataset_from_log(val_square_log, trim_seconds,
                                  "validation_square")

    pe_order = persistency_order(train.u, max_persistency)
    notes: list[str] = []
    models: dict[str, PolyModel] = {}
    unestimated: list[str] = []
    for spec in dedupe_grid(grid):
        if spec.structure != "BJ" and spec.na + spec.nb > pe_order:
            notes.append(f"{spec.cid}: combined order na+nb={spec.na + spec.nb} "
                         f"exceeds the persistency bound {pe_order}; skipped")
            unestimated.append(spec.cid)
            continue
        try:
            models[spec.cid] = estimate_candidate(spec, train)
        except (EstimationError, IdentifiabilityError, DataError,
                DivergenceError) as exc:
            best = getattr(exc, "best_model", None)
            if best is not None:
                models[spec.cid] = best
                notes.append(f"{spec.cid}: {exc}; using the best iterate")
            else:
                notes.append(f"{spec.cid}: not estimated ({exc})")
                unestimated.append(spec.cid)

    if not models:
        raise PipelineError(
            "no candidate could be estimated:\n  " + "\n  ".join(notes))

    rows, reports = compare_models(models, train, val_prbs, val_square,
                                   plant_log=val_prbs_log, cascade=cascade,
                                   thresholds=th,
                                   stage2_trim_seconds=trim_seconds)
    for cid in sorted(unestimated):
        rows.append(ComparisonRow(
            candidate=cid, validation_prbs_fit=math.nan,
            validation_square_fit=math.nan, training_fit=math.nan,
            stage2_pass=False, stage1_pass=False, rmse=math.nan, mse=math.nan,
            aic=math.nan, whiteness_pass=False, causality_pass=False,
            residual_degenerate=False))

    passers = [r for r in rows if r.stage1_pass]
    if not passers:
        near = sorted((r for r in rows if math.isfinite(r.training_fit)),
                      key=lambda r: -r.training_fit)[:3]
        lines = [f"{r.candidate}: train={r.training_fit:.1f}% "
                 f"prbs={r.validation_prbs_fit:.1f}% "
                 f"square={r.validation_square_fit:.1f}% "
                 f"whiteness={'ok' if r.whiteness_pass else 'FAIL'} "
                 f"causality={'ok' if r.causality_pass else 'FAIL'}"
                 for r in near]
        raise PipelineError(
            "no candidate passed the stage-1 gates; best near-misses:\n  "
            + "\n  ".join(lines))

    winner_row = passers[0]
    # definition of the winner, asserted on every run
    assert all(winner_row.rmse <= r.rmse or not math.isfinite(r.rmse)
               for r in passers)
    return IdentificationResult(
        rows=rows, models=models, reports=reports,
        winner_id=winner_row.candidate, winner=models[winner_row.candidate],
        persistency=pe_order, notes=notes, config_hash=train_log.config_hash)


@dataclass
class RetuneResult:
    baseline: CascadeConfig
    tuned: CascadeConfig
    baseline_cost: float
    tuned_cost: float
    lqr: LqrResult | None
    lqr_note: str
    trace_t: np.ndarray
    trace_r: np.ndarray
    angle_before: np.ndarray
    angle_after: np.ndarray
    angle_lqr: np.ndarray | None
    config_hash: str = ""


def _step_cost(log: DataLog, step: float, band: float,
               settle_weight: float) -> float:
    """Integral squared angle error plus a settling-time penalty."""
    dt = log.sample_time
    err = log.r - log.y_angle
    ise = float(err @ err) * dt
    outside = np.abs(err) > band * abs(step)
    if not np.any(outside):
        settle = 0.0
    elif outside[-1]:
        settle = 2.0 * log.t[-1]          # never settled: worst penalty
    else:
        settle = float(log.t[int(np.max(np.where(outside)[0])) + 1])
    return ise + settle_weight * settle


def _gain_grid(values_text: str) -> list[float]:
    return [float(v) for v in values_text.split(",") if v.strip()]


def retune(model: PolyModel, cfg: FullConfig) -> RetuneResult:
    """Grid-search PID gains against the identified model, plus LQR design.

    The baseline gains are always part of the grid, so the tuned cost is
    never worse than the baseline cost.
    """
    rt = cfg.retune
    step = math.radians(rt.step_deg)
    n = int(round(rt.duration_s / model.sample_time))
    refs = Signal(np.full(n, step), model.sample_time, label="r")
    dist = Signal(np.zeros(n), model.sample_time, label="d_s")

    baseline = cfg.cascade()
    combos = [(baseline.outer.kp, baseline.inner.kp,
               baseline.inner.ki, baseline.inner.kd)]
    for okp in _gain_grid(rt.outer_kp):
        for ikp in _gain_grid(rt.inner_kp):
            for iki in _gain_grid(rt.inner_ki):
                for ikd in _gain_grid(rt.inner_kd):
                    combos.append((okp, ikp, iki, ikd))

    def make_cascade(okp, ikp, iki, ikd) -> CascadeConfig:
        outer = PidGains(kp=okp, ki=0.0, kd=0.0,
                         integral_limit=baseline.outer.integral_limit,
                         output_limit=baseline.outer.output_limit,
                         deriv_lpf_hz=baseline.outer.deriv_lpf_hz)
        inner = PidGains(kp=ikp, ki=iki, kd=ikd,
                         integral_limit=baseline.inner.integral_limit,
                         output_limit=baseline.inner.output_limit,
                         deriv_lpf_hz=baseline.inner.deriv_lpf_hz)
        return CascadeConfig(outer=outer, inner=inner)

    def cost_of(cc: CascadeConfig) -> tuple[float, DataLog | None]:
        try:
            log = closedloop_simulate(model, cc, refs, dist)
        except (DivergenceError, ConfigError):
            return math.inf, None
        return _step_cost(log, step, rt.settle_band, rt.settle_weight), log

    baseline_cost, baseline_log = cost_of(baseline)
    best_cost, best_cc, best_log = baseline_cost, baseline, baseline_log
    for combo in combos:
        cc = make_cascade(*combo)
        c, log = cost_of(cc)
        if c < best_cost:
            best_cost, best_cc, best_log = c, cc, log
    if best_log is None:
        raise RetuneError(
            "every gain-grid point diverged on the identified model")

    lqr_res = None
    lqr_note = ""
    angle_lqr = None
    try:
        real = poly_to_statespace(model)
        lqr_res = lqr_design(real, np.eye(real.n_states),
                             np.array([[rt.lqr_r]]))
        lqr_log = closedloop_simulate(real, lqr_res.K, refs, dist)
        angle_lqr = lqr_log.y_angle
    except (DesignError, DomainError, ConfigError, DivergenceError) as exc:
        lqr_note = f"LQR design skipped: {exc}"  # the PID result stands alone

    if baseline_log is None:
        t = refs.times
        angle_before = np.full(n, math.nan)
    else:
        t = baseline_log.t
        angle_before = baseline_log.y_angle
    return RetuneResult(
        baseline=baseline, tuned=best_cc,
        baseline_cost=baseline_cost, tuned_cost=best_cost,
        lqr=lqr_res, lqr_note=lqr_note,
        trace_t=t, trace_r=refs.samples,
        angle_before=angle_before, angle_after=best_log.y_angle,
        angle_lqr=angle_lqr)


def write_retune_csv(path, res: RetuneResult, config_hash: str = "") -> None:
    cols = ["t", "r", "angle_before", "angle_after"]
    data = [res.trace_t, res.trace_r, res.angle_before, res.angle_after]
    if res.angle_lqr is not None:
        cols.append("angle_lqr")
        data.append(res.angle_lqr)
    lines = ["# quadid-retune v1", f"# config_hash = {config_hash}"]
    lines.append(f"# baseline_cost = {fmt_float(res.baseline_cost)}")
    lines.append(f"# tuned_cost = {fmt_float(res.tuned_cost)}")
    lines.append(
        f"# tuned_gains = outer_kp={fmt_float(res.tuned.outer.kp)} "
        f"inner_kp={fmt_float(res.tuned.inner.kp)} "
        f"inner_ki={fmt_float(res.tuned.inner.ki)} "
        f"inner_kd={fmt_float(res.tuned.inner.kd)}")
    if res.lqr is not None:
        lines.append(f"# lqr_gain = {' '.join(fmt_float(v) for v in res.lqr.K.ravel())}")
        lines.append(f"# lqr_riccati_residual = {fmt_float(res.lqr.residual)}")
        lines.append(f"# lqr_spectral_radius = {fmt_float(res.lqr.spectral_radius)}")
    lines.append(",".join(cols))
    for row in zip(*data):
        lines.append(",".join(fmt_float(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_retune_csv(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Read a re-tune traces file back; returns (metadata, columns)."""
    meta: dict[str, str] = {}
    header: list[str] = []
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    k, v = body.split("=", 1)
                    meta[k.strip()] = v.strip()
                continue
            if not header:
                header = line.split(",")
                continue
            rows.append([float(v) for v in line.split(",")])
    if not header or not rows:
        raise DataError(f"{path}: no trace data")
    arr = np.array(rows)
    cols = {name: arr[:, i] for i, name in enumerate(header)}
    return meta, cols
