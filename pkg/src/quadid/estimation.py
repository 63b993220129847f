"""Polynomial-model identification from input/output records.

Structures: ARX (equation-error least squares), a two-stage instrumental
variable variant that is consistent under the noise/regressor
correlation closed-loop data exhibits, and ARMAX via pseudo-linear
(extended least squares) iteration.  Least squares is always solved
through an orthogonal factorization of the regressor matrix, never the
normal equations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.signal

from .errors import (DataError, DivergenceError, DomainError, EstimationError,
                     IdentifiabilityError)
from .signals import Signal, fmt_float

ARX = "ARX"
ARMAX = "ARMAX"

SIM_BOUND = 1e6


@dataclass
class PolyModel:
    """Discrete-time polynomial model A(z) y = B(z) u (+ C(z) e).

    `a` is the full monic A polynomial [1, a1, ..., a_na]; `b` holds the
    nb coefficients b_nk .. b_{nk+nb-1} with the nk leading zeros
    implicit; `c` is the full monic C polynomial ([1] for ARX).
    """

    structure: str
    a: np.ndarray
    b: np.ndarray
    nk: int
    sample_time: float
    c: np.ndarray = field(default_factory=lambda: np.array([1.0]))
    noise_variance: float = 0.0
    param_covariance: np.ndarray | None = None

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if self.structure not in (ARX, ARMAX):
            raise DomainError(f"unknown model structure {self.structure!r}")
        if self.a[0] != 1.0:
            raise DomainError(f"A(z) must be monic, leading coefficient {self.a[0]}")
        if self.c[0] != 1.0:
            raise DomainError(f"C(z) must be monic, leading coefficient {self.c[0]}")
        if self.nk < 0:
            raise DomainError(f"input delay must be >= 0, got {self.nk}")
        if len(self.b) < 1:
            raise DomainError("B(z) needs at least one coefficient")
        if self.sample_time <= 0:
            raise DomainError(f"sample_time must be > 0, got {self.sample_time}")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.c))):
            raise DomainError("non-finite polynomial coefficients")

    @property
    def na(self) -> int:
        return len(self.a) - 1

    @property
    def nb(self) -> int:
        return len(self.b)

    @property
    def nc(self) -> int:
        return len(self.c) - 1

    def b_full(self) -> np.ndarray:
        """B with its nk leading zeros spelled out."""
        return np.concatenate([np.zeros(self.nk), self.b])

    def order_tag(self) -> str:
        """Compact id in the conventional digit-concatenation style."""
        if self.structure == ARMAX:
            return f"ARMX {self.na}{self.nb}{self.nc}{self.nk}"
        return f"{self.structure} {self.na}{self.nb}{self.nk}"


@dataclass
class Dataset:
    """Paired excitation/response record for one channel."""

    u: Signal
    y: Signal
    channel: str = ""
    role: str = "training"   # training | validation_prbs | validation_square
    u_offset: float = 0.0
    y_offset: float = 0.0

    def __post_init__(self):
        if len(self.u) != len(self.y):
            raise DataError(
                f"u has {len(self.u)} samples but y has {len(self.y)}")
        if self.u.sample_time != self.y.sample_time:
            raise DataError("u and y sample times differ")

    def __len__(self):
        return len(self.u)

    @property
    def sample_time(self) -> float:
        return self.u.sample_time


class Approach(enum.Enum):
    DIRECT = "direct"
    INDIRECT = "indirect"
    JOINT_IO = "joint_io"


@dataclass
class ApproachFlags:
    """What the experimenter has in hand, per the approach-selection table."""

    have_control_signal: bool = False
    have_response: bool = False
    have_reference: bool = False
    know_controller: bool = False


def select_approach(flags: ApproachFlags) -> Approach | None:
    """Pick the identification approach the available signals allow.

    Ties resolve direct > indirect > joint input-output.
    """
    if flags.have_control_signal and flags.have_response:
        return Approach.DIRECT
    if flags.have_response and flags.have_reference and flags.know_controller:
        return Approach.INDIRECT
    if (flags.have_control_signal and flags.have_response
            and flags.have_reference):
        return Approach.JOINT_IO
    return None


def detrend(d: Dataset) -> Dataset:
    """Remove sample means from u and y, recording them for reporting."""
    if len(d) == 0:
        raise DataError("empty dataset")
    um = float(np.mean(d.u.samples))
    ym = float(np.mean(d.y.samples))
    return Dataset(
        u=d.u.with_samples(d.u.samples - um),
        y=d.y.with_samples(d.y.samples - ym),
        channel=d.channel, role=d.role,
        u_offset=d.u_offset + um, y_offset=d.y_offset + ym,
    )


def regression_start(na: int, nb: int, nk: int, nc: int = 0) -> int:
    """First sample index at which every regressor lag is defined."""
    return max(na, nk + nb - 1, nc)


def build_regressors(d: Dataset, na: int, nb: int, nk: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack the equation-error regression.

    Row t holds [-y(t-1) .. -y(t-na), u(t-nk) .. u(t-nk-nb+1)] and the
    target vector holds y(t), starting at the first fully-defined index.
    """
    if na < 0 or nb < 1 or nk < 0:
        raise DomainError(f"invalid orders na={na} nb={nb} nk={nk}")
    u = d.u.samples
    y = d.y.samples
    n = len(y)
    start = regression_start(na, nb, nk)
    rows = n - start
    if rows < 1:
        raise DataError(
            f"{n} samples cannot support orders na={na} nb={nb} nk={nk}")
    phi = np.empty((rows, na + nb))
    for i in range(1, na + 1):
        phi[:, i - 1] = -y[start - i:n - i]
    for j in range(nb):
        phi[:, na + j] = u[start - nk - j:n - nk - j]
    return phi, y[start:]


def regressor_names(na: int, nb: int, nk: int, nc: int = 0) -> list[str]:
    names = [f"y(t-{i})" for i in range(1, na + 1)]
    names += [f"u(t-{nk + j})" for j in range(nb)]
    names += [f"e(t-{i})" for i in range(1, nc + 1)]
    return names


def _svd_lstsq(phi: np.ndarray, y: np.ndarray,
               names: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Least squares via SVD with rank checking.

    Returns the solution and the unscaled (Phi^T Phi)^-1 factor for the
    covariance.  Rank tolerance: eps * max-dimension * largest singular
    value.
    """
    u_svd, s, vt = np.linalg.svd(phi, full_matrices=False)
    tol = np.finfo(float).eps * max(phi.shape) * s[0] if s[0] > 0 else 0.0
    rank = int(np.sum(s > tol))
    if rank < phi.shape[1]:
        null_vecs = vt[rank:]
        involved = np.where(np.max(np.abs(null_vecs), axis=0) > 1e-6)[0]
        cols = [names[i] for i in involved]
        raise IdentifiabilityError(
            f"regressor matrix is rank deficient ({rank}/{phi.shape[1]}); "
            f"dependent columns: {', '.join(cols)}")
    theta = vt.T @ ((u_svd.T @ y) / s)
    unscaled_cov = (vt.T / s**2) @ vt
    return theta, unscaled_cov


def _check_estimable(rows: int, cols: int, orders: str):
    if rows <= cols:
        raise DataError(
            f"{rows} regression rows cannot identify {cols} parameters ({orders})")


def estimate_arx(d: Dataset, na: int, nb: int, nk: int) -> PolyModel:
    """Equation-error least squares fit of an ARX model."""
    phi, y = build_regressors(d, na, nb, nk)
    _check_estimable(phi.shape[0], phi.shape[1], f"na={na} nb={nb} nk={nk}")
    theta, unscaled_cov = _svd_lstsq(phi, y, regressor_names(na, nb, nk))
    resid = y - phi @ theta
    dof = len(y) - (na + nb)
    sigma2 = float(resid @ resid) / dof
    return PolyModel(
        structure=ARX,
        a=np.concatenate([[1.0], theta[:na]]),
        b=theta[na:],
        nk=nk,
        sample_time=d.sample_time,
        noise_variance=sigma2,
        param_covariance=sigma2 * unscaled_cov,
    )


def stabilize_a(a: np.ndarray) -> np.ndarray:
    """Reflect the roots of A(z) outside the unit circle to their
    reciprocals, keeping the polynomial real and monic."""
    roots = np.roots(a)
    mags = np.abs(roots)
    if np.all(mags <= 1.0):
        return a
    roots = np.where(mags > 1.0, 1.0 / np.conj(roots), roots)
    out = np.real(np.poly(roots))
    out[0] = 1.0
    return out


def estimate_iv(d: Dataset, na: int, nb: int, nk: int) -> PolyModel:
    """Two-stage instrumental variable fit.

    An initial least-squares model is simulated on u to produce
    noise-free instrument outputs; the normal equations are then solved
    with instruments replacing the lagged measured outputs, removing the
    noise/regressor correlation that biases plain least squares on
    closed-loop data.  The initial model is stabilized (poles reflected
    into the unit circle) before the instrument simulation so a poor
    first stage cannot blow the instruments up.
    """
    init = estimate_arx(d, na, nb, nk)
    init_stable = PolyModel(ARX, stabilize_a(init.a), init.b, nk,
                            d.sample_time)
    try:
        y_inst = simulate_model(init_stable, d.u)
    except DivergenceError as exc:
        raise IdentifiabilityError(
            f"instrument simulation diverged for na={na} nb={nb} nk={nk}: "
            f"{exc}") from exc
    inst = Dataset(u=d.u, y=y_inst, channel=d.channel, role=d.role)
    z, _ = build_regressors(inst, na, nb, nk)
    phi, y = build_regressors(d, na, nb, nk)
    ztp = z.T @ phi
    try:
        theta = np.linalg.solve(ztp, z.T @ y)
        ztp_inv = np.linalg.inv(ztp)
    except np.linalg.LinAlgError as exc:
        raise IdentifiabilityError(
            f"singular instrument cross-product for na={na} nb={nb} nk={nk}: "
            f"{exc}") from exc
    resid = y - phi @ theta
    dof = len(y) - (na + nb)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * (ztp_inv @ (z.T @ z) @ ztp_inv.T)
    return PolyModel(
        structure=ARX,
        a=np.concatenate([[1.0], theta[:na]]),
        b=theta[na:],
        nk=nk,
        sample_time=d.sample_time,
        noise_variance=sigma2,
        param_covariance=cov,
    )


def estimate_armax(d: Dataset, na: int, nb: int, nc: int, nk: int,
                   max_iter: int = 200, tol: float = 1e-8) -> PolyModel:
    """Pseudo-linear (extended least squares) ARMAX fit.

    Residuals are initialized from the ARX fit of the same orders and
    the regression is extended with lagged residual estimates; the
    returned iterate never has a higher one-step prediction-error cost
    than that ARX initialization (which is itself the fallback when the
    moving-average extension brings nothing).
    """
    if nc < 1:
        raise EstimationError(
            f"nc={nc} has no moving-average part; use estimate_arx")
    arx0 = estimate_arx(d, na, nb, nk)
    u = d.u.samples
    y = d.y.samples
    n = len(y)
    start = regression_start(na, nb, nk, nc)
    _check_estimable(n - start, na + nb + nc,
                     f"na={na} nb={nb} nc={nc} nk={nk}")

    baseline = PolyModel(ARMAX, arx0.a, arx0.b, nk, d.sample_time,
                         c=np.concatenate([[1.0], np.zeros(nc)]),
                         noise_variance=arx0.noise_variance,
                         param_covariance=None)
    best = baseline
    best_cost = _pe_cost(baseline, d)
    if not math.isfinite(best_cost):
        raise EstimationError(
            f"ARX initialization is unusable for na={na} nb={nb} nc={nc} "
            f"nk={nk}")
    y_ms = float(y @ y) / n
    if best_cost <= 1e-24 * max(y_ms, 1e-300):
        return baseline   # the ARX start already explains the record

    eps = np.zeros(n)
    pred0 = predict_one_step(arx0, d)
    s0 = regression_start(na, nb, nk)
    eps[s0:] = y[s0:] - pred0.samples

    names = regressor_names(na, nb, nk, nc)
    theta_prev = None
    converged = False
    for _ in range(max_iter):
        phi = np.empty((n - start, na + nb + nc))
        for i in range(1, na + 1):
            phi[:, i - 1] = -y[start - i:n - i]
        for j in range(nb):
            phi[:, na + j] = u[start - nk - j:n - nk - j]
        for i in range(1, nc + 1):
            phi[:, na + nb + i - 1] = eps[start - i:n - i]
        try:
            theta, unscaled_cov = _svd_lstsq(phi, y[start:], names)
        except IdentifiabilityError:
            break   # residual columns collapsed; keep the best iterate
        resid = y[start:] - phi @ theta
        eps = np.zeros(n)
        eps[start:] = resid

        dof = (n - start) - (na + nb + nc)
        sigma2 = float(resid @ resid) / dof
        model = PolyModel(
            ARMAX,
            a=np.concatenate([[1.0], theta[:na]]),
            b=theta[na:na + nb],
            nk=nk,
            sample_time=d.sample_time,
            c=np.concatenate([[1.0], theta[na + nb:]]),
            noise_variance=sigma2,
            param_covariance=sigma2 * unscaled_cov,
        )
        cost = _pe_cost(model, d)
        if math.isfinite(cost) and cost < best_cost:
            best, best_cost = model, cost
        if theta_prev is not None:
            if np.linalg.norm(theta - theta_prev) < tol * (1.0 + np.linalg.norm(theta_prev)):
                converged = True
                break
        theta_prev = theta

    if not converged and best is baseline:
        raise EstimationError(
            f"extended least squares did not improve on the ARX start for "
            f"na={na} nb={nb} nc={nc} nk={nk}", best_model=baseline)
    return best


def _pe_cost(m: PolyModel, d: Dataset) -> float:
    """Mean squared one-step prediction error; inf for unusable models."""
    e = _residual_array(m, d.u.samples, d.y.samples)
    if not np.all(np.isfinite(e)):
        return math.inf
    return float(e @ e) / len(e)


def prediction_start(m: PolyModel) -> int:
    return regression_start(m.na, m.nb, m.nk, m.nc)


def _residual_array(m: PolyModel, u: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Raw one-step residuals from the first fully-initialized index
    (no validation; may carry non-finite values for unstable C)."""
    v = (scipy.signal.lfilter(m.a, [1.0], y)
         - scipy.signal.lfilter(m.b_full(), [1.0], u))
    if m.nc > 0:
        with np.errstate(all="ignore"):
            e = scipy.signal.lfilter([1.0], m.c, v)
    else:
        e = v
    return e[prediction_start(m):]


def prediction_residuals(m: PolyModel, d: Dataset) -> Signal:
    """One-step prediction residuals, aligned with y from the first
    fully-initialized index.

    For ARMAX the residuals are filtered through C(z) with zero
    prehistory: C e = A y - B u.
    """
    if d.sample_time != m.sample_time:
        raise DataError(
            f"dataset sample time {d.sample_time} differs from model "
            f"sample time {m.sample_time}")
    return Signal(_residual_array(m, d.u.samples, d.y.samples),
                  m.sample_time, label="residual")


def predict_one_step(m: PolyModel, d: Dataset) -> Signal:
    """One-step-ahead predicted output from measured past y and u."""
    e = prediction_residuals(m, d)
    start = prediction_start(m)
    return Signal(d.y.samples[start:] - e.samples, m.sample_time,
                  label="y_hat")


def residual_variance(m: PolyModel, d: Dataset) -> float:
    """Degrees-of-freedom corrected residual variance on a dataset."""
    e = prediction_residuals(m, d).samples
    dof = len(e) - (m.na + m.nb + m.nc)
    if dof < 1:
        raise DataError("too few residuals for a variance estimate")
    return float(e @ e) / dof


def simulate_model(m: PolyModel, u: Signal, y0: np.ndarray | None = None,
                   bound: float = SIM_BOUND) -> Signal:
    """Infinite-horizon simulation driven by u only (no measured y).

    y0, when given, holds the na most recent past outputs (newest
    first).  A(z) need not be stable; output beyond `bound` raises.
    """
    b_full = m.b_full()
    if y0 is None:
        y = scipy.signal.lfilter(b_full, m.a, u.samples)
    else:
        zi = scipy.signal.lfiltic(b_full, m.a, np.asarray(y0, dtype=float))
        y, _ = scipy.signal.lfilter(b_full, m.a, u.samples, zi=zi)
    bad = ~np.isfinite(y) | (np.abs(y) > bound)
    if np.any(bad):
        step = int(np.argmax(bad))
        raise DivergenceError(
            f"simulated output exceeded {bound} at step {step}", step=step)
    return Signal(y, u.sample_time, label="y_sim")


def simulate_with_estimated_ic(m: PolyModel, d: Dataset,
                               bound: float = SIM_BOUND) -> Signal:
    """Simulate on d.u with the free initial state chosen by least squares.

    A record that starts mid-experiment has unknown initial conditions;
    for models with slow (or integrating) poles a zero start leaves an
    error that never decays, so the comparison convention estimates the
    initial state from the data, like standard model-output tooling.
    """
    forced = simulate_model(m, d.u, bound=bound)
    order = max(m.na, len(m.b_full()) - 1)
    if order == 0:
        return forced
    n = len(d)
    basis = np.empty((n, order))
    zeros_u = np.zeros(n)
    b_full = m.b_full()
    for i in range(order):
        zi = np.zeros(order)
        zi[i] = 1.0
        col, _ = scipy.signal.lfilter(b_full, m.a, zeros_u, zi=zi)
        if not np.all(np.isfinite(col)):
            return forced   # unstable homogeneous modes: keep the zero start
        basis[:, i] = col
    target = d.y.samples - forced.samples
    zi_hat, *_ = np.linalg.lstsq(basis, target, rcond=None)
    y = forced.samples + basis @ zi_hat
    bad = ~np.isfinite(y) | (np.abs(y) > bound)
    if np.any(bad):
        raise DivergenceError(
            f"simulated output exceeded {bound} at step {int(np.argmax(bad))}",
            step=int(np.argmax(bad)))
    return Signal(y, d.sample_time, label="y_sim")


def prediction_fit(m: PolyModel, d: Dataset) -> float:
    """Fit percentage of the one-step predictor on a dataset."""
    start = prediction_start(m)
    y_ref = Signal(d.y.samples[start:], d.sample_time, label=d.y.label)
    return fit_percent(y_ref, predict_one_step(m, d))


def simulation_fit(m: PolyModel, d: Dataset) -> float:
    """Fit percentage of the infinite-horizon simulation on a dataset,
    with the initial state estimated from the record."""
    return fit_percent(d.y, simulate_with_estimated_ic(m, d))


def fit_percent(y: Signal, y_hat: Signal) -> float:
    """Normalized-RMSE fit: 100 for a perfect match, 0 for the mean
    predictor, negative when worse than the mean."""
    if len(y) != len(y_hat):
        raise DataError(f"length mismatch: {len(y)} vs {len(y_hat)}")
    ref = y.samples - np.mean(y.samples)
    denom = float(np.linalg.norm(ref))
    if denom == 0.0:
        raise DataError("fit is undefined for a constant reference signal")
    err = float(np.linalg.norm(y.samples - y_hat.samples))
    return 100.0 * (1.0 - err / denom)


def frequency_response(m: PolyModel, omegas: np.ndarray) -> np.ndarray:
    """G(e^{j w Ts}) = B/A on the given grid [rad/s], below Nyquist."""
    omegas = np.asarray(omegas, dtype=float)
    nyquist = math.pi / m.sample_time
    if np.any(omegas >= nyquist) or np.any(omegas < 0):
        raise DomainError(
            f"frequencies must lie in [0, {nyquist}) rad/s")
    z_inv = np.exp(-1j * omegas * m.sample_time)
    num = np.polyval(m.b_full()[::-1], z_inv)
    den = np.polyval(m.a[::-1], z_inv)
    return num / den


def bode_arrays(m: PolyModel, omegas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude [dB] and unwrapped phase [deg] on a frequency grid."""
    g = frequency_response(m, omegas)
    mag_db = 20.0 * np.log10(np.abs(g))
    phase_deg = np.degrees(np.unwrap(np.angle(g)))
    return mag_db, phase_deg


def model_aic(m: PolyModel, d: Dataset) -> float:
    """Akaike information criterion of the one-step predictor."""
    e = prediction_residuals(m, d).samples
    n = len(e)
    ss = float(e @ e)
    if n < 1 or ss <= 0.0:
        return -math.inf
    n_params = m.na + m.nb + m.nc
    return n * math.log(ss / n) + 2.0 * n_params


MODEL_FORMAT_VERSION = "quadid-model v1"


def save_model(path, m: PolyModel) -> None:
    """Versioned plain-text model file; bit-exact round trip."""
    lines = [MODEL_FORMAT_VERSION]
    lines.append(f"structure = {m.structure}")
    lines.append(f"na = {m.na}")
    lines.append(f"nb = {m.nb}")
    lines.append(f"nc = {m.nc}")
    lines.append(f"nk = {m.nk}")
    lines.append(f"sample_time = {fmt_float(m.sample_time)}")
    lines.append("a = " + " ".join(fmt_float(v) for v in m.a))
    lines.append("b = " + " ".join(fmt_float(v) for v in m.b))
    lines.append("c = " + " ".join(fmt_float(v) for v in m.c))
    lines.append(f"noise_variance = {fmt_float(m.noise_variance)}")
    if m.param_covariance is None:
        lines.append("covariance_rows = 0")
    else:
        p = m.param_covariance.shape[0]
        lines.append(f"covariance_rows = {p}")
        for row in m.param_covariance:
            lines.append("cov = " + " ".join(fmt_float(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> PolyModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != MODEL_FORMAT_VERSION:
        raise DataError(
            f"{path}: not a {MODEL_FORMAT_VERSION} file "
            f"(got {lines[0] if lines else 'empty'})")
    fields: dict[str, str] = {}
    cov_rows: list[list[float]] = []
    for ln in lines[1:]:
        k, v = ln.split("=", 1)
        k, v = k.strip(), v.strip()
        if k == "cov":
            cov_rows.append([float(x) for x in v.split()])
        else:
            fields[k] = v
    cov = np.array(cov_rows) if int(fields["covariance_rows"]) > 0 else None
    m = PolyModel(
        structure=fields["structure"],
        a=np.array([float(x) for x in fields["a"].split()]),
        b=np.array([float(x) for x in fields["b"].split()]),
        nk=int(fields["nk"]),
        sample_time=float(fields["sample_time"]),
        c=np.array([float(x) for x in fields["c"].split()]),
        noise_variance=float(fields["noise_variance"]),
        param_covariance=cov,
    )
    for name in ("na", "nb", "nc"):
        if int(fields[name]) != getattr(m, name):
            raise DataError(
                f"{path}: header {name}={fields[name]} does not match the "
                f"coefficient arrays ({getattr(m, name)})")
    return m
