"""Cascade attitude controllers, model realization, and LQR design.

The cascade mirrors the identification rig: a proportional outer angle
loop commands an inner rate PID, and the excitation is injected at the
controller output, i.e. added to the command entering the plant.  The
same loop runs against either an identified polynomial model (whose
angle is the pure integral of its rate output) or a state-space
realization under state feedback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datalog import DataLog
from .errors import ConfigError, DesignError, DivergenceError, DomainError
from .estimation import PolyModel
from .signals import Signal


@dataclass
class PidGains:
    """One PID stage with anti-windup clamp and output saturation.

    The derivative acts on the measurement, optionally smoothed by a
    first-order filter (deriv_lpf_hz = None leaves it raw); unfiltered
    differentiation of noisy rate feedback destabilizes the loop.
    """

    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0
    integral_limit: float = 5.0
    output_limit: float = 10.0
    deriv_lpf_hz: float | None = 30.0

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"gain {name} must be finite")
        if self.integral_limit <= 0 or self.output_limit <= 0:
            raise ConfigError("limits must be positive")


@dataclass
class PidState:
    integral: float = 0.0
    prev_measurement: float | None = None
    deriv: float = 0.0


@dataclass
class CascadeConfig:
    """Outer angle loop (proportional in the reference setup) feeding an
    inner rate loop, with the excitation port at the controller output."""

    outer: PidGains = field(default_factory=lambda: PidGains(kp=3.0))
    inner: PidGains = field(
        default_factory=lambda: PidGains(kp=1.3, ki=0.01, kd=0.023))
    injection: str = "controller_output"

    def __post_init__(self):
        if self.injection != "controller_output":
            raise ConfigError(
                f"only controller_output injection is supported, "
                f"got {self.injection!r}")


@dataclass
class CascadeState:
    outer: PidState = field(default_factory=PidState)
    inner: PidState = field(default_factory=PidState)


@dataclass
class StateSpace:
    """Discrete-time realization x' = A x + B u, y = C x + D u."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    sample_time: float

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DomainError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise DomainError("B/C dimensions inconsistent with A")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise DomainError("D dimensions inconsistent with B and C")
        if self.sample_time <= 0:
            raise DomainError(f"sample_time must be > 0, got {self.sample_time}")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]


def pid_step(gains: PidGains, setpoint: float, measurement: float, dt: float,
             state: PidState) -> tuple[float, PidState]:
    """One discrete PID update.

    Forward-Euler integral with clamping, backward-difference derivative
    on the measurement, saturated output.
    """
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    error = setpoint - measurement
    integral = state.integral + error * dt
    integral = min(max(integral, -gains.integral_limit), gains.integral_limit)

    if state.prev_measurement is None:
        raw_deriv = 0.0
    else:
        raw_deriv = (measurement - state.prev_measurement) / dt
    if gains.deriv_lpf_hz is None:
        deriv = raw_deriv
    else:
        pole = math.exp(-2.0 * math.pi * gains.deriv_lpf_hz * dt)
        deriv = (1.0 - pole) * raw_deriv + pole * state.deriv

    command = gains.kp * error + gains.ki * integral - gains.kd * deriv
    command = min(max(command, -gains.output_limit), gains.output_limit)
    return command, PidState(integral, measurement, deriv)


def cascade_step(cfg: CascadeConfig, angle_ref: float, angle_meas: float,
                 rate_meas: float, d_s: float, dt: float,
                 state: CascadeState) -> tuple[float, CascadeState]:
    """Angle loop commands a rate setpoint; rate loop commands the channel;
    the excitation d_s is added at the controller output."""
    rate_ref, outer = pid_step(cfg.outer, angle_ref, angle_meas, dt, state.outer)
    u, inner = pid_step(cfg.inner, rate_ref, rate_meas, dt, state.inner)
    return u + d_s, CascadeState(outer, inner)


def poly_to_statespace(m: PolyModel) -> StateSpace:
    """Controllable canonical realization of B(z)/A(z), delay included."""
    if m.a[0] != 1.0:
        raise DomainError("A(z) must be monic for the canonical realization")
    b_full = m.b_full()
    n = max(m.na, len(b_full) - 1)
    if n < 1:
        raise DomainError("static gains have no state-space realization")
    den = np.zeros(n + 1)
    den[: m.na + 1] = m.a
    num = np.zeros(n + 1)
    num[: len(b_full)] = b_full

    A = np.zeros((n, n))
    A[0, :] = -den[1:]
    if n > 1:
        A[1:, :-1] = np.eye(n - 1)
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    D = np.array([[num[0]]])
    C = (num[1:] - den[1:] * num[0]).reshape(1, n)
    return StateSpace(A, B, C, D, m.sample_time)


@dataclass
class LqrResult:
    """Feedback gain with its certificate."""

    K: np.ndarray
    P: np.ndarray
    residual: float
    spectral_radius: float
    iterations: int


def riccati_residual(A: np.ndarray, B: np.ndarray, Q: np.ndarray,
                     R: np.ndarray, P: np.ndarray) -> float:
    """Infinity norm of the discrete algebraic Riccati defect at P."""
    apb = A.T @ P @ B
    inner = np.linalg.solve(R + B.T @ P @ B, apb.T)
    defect = A.T @ P @ A - P - apb @ inner + Q
    return float(np.max(np.abs(defect)))


def lqr_design(sys: StateSpace, Q: np.ndarray, R: np.ndarray,
               tol: float = 1e-9, max_iter: int = 100_000) -> LqrResult:
    """Discrete LQR gain by fixed-point Riccati iteration from P0 = Q.

    Raises DesignError when the iteration does not reach the residual
    tolerance (unstabilizable pair or ill-conditioning) or the closed
    loop is not contractive.
    """
    A, B = sys.A, sys.B
    n, m_in = B.shape
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if Q.shape != (n, n):
        raise DomainError(f"Q must be {n}x{n}, got {Q.shape}")
    if R.shape != (m_in, m_in):
        raise DomainError(f"R must be {m_in}x{m_in}, got {R.shape}")
    if np.min(np.linalg.eigvalsh((Q + Q.T) / 2)) < -1e-12:
        raise DomainError("Q must be positive semidefinite")
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise DomainError("R must be positive definite") from exc

    P = Q.copy()
    for it in range(1, max_iter + 1):
        apb = A.T @ P @ B
        gain_term = np.linalg.solve(R + B.T @ P @ B, apb.T)
        P_next = A.T @ P @ A - apb @ gain_term + Q
        P_next = (P_next + P_next.T) / 2.0
        P = P_next
        res = riccati_residual(A, B, Q, R, P)
        if res < tol:
            K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            rho = float(np.max(np.abs(np.linalg.eigvals(A - B @ K))))
            if rho >= 1.0:
                raise DesignError(
                    f"closed loop not contractive (spectral radius {rho})")
            return LqrResult(K=K, P=P, residual=res, spectral_radius=rho,
                             iterations=it)
    raise DesignError(
        f"Riccati iteration did not converge in {max_iter} steps "
        f"(residual {res}); the pair may be unstabilizable or ill-conditioned")


def _effective_delay_ok(m: PolyModel) -> bool:
    b_full = m.b_full()
    return len(b_full) == 0 or b_full[0] == 0.0


def closedloop_simulate(system, cfg, refs: Signal, disturbance: Signal,
                        channel: str = "roll",
                        bound: float = 1e6) -> DataLog:
    """Roll out the loop of Fig-style cascade control against a system.

    system: a PolyModel (rate model; its angle output is the pure
    integral of the rate), a StateSpace paired with a state-feedback
    gain via cfg, or a callable adapter `step(u) -> (rate, angle)` for
    an external plant.

    cfg: CascadeConfig for cascade control, or an ndarray gain K when
    `system` is a StateSpace (input u = ref - K x + d).

    Logs reference, injected excitation, channel command, rate, and
    angle per step.
    """
    if len(refs) != len(disturbance):
        raise ConfigError(
            f"refs ({len(refs)}) and disturbance ({len(disturbance)}) lengths differ")
    if refs.sample_time != disturbance.sample_time:
        raise ConfigError("refs and disturbance sample times differ")
    dt = refs.sample_time
    n = len(refs)
    r = refs.samples
    d = disturbance.samples

    t = np.arange(n) * dt
    u_log = np.zeros(n)
    rate_log = np.zeros(n)
    angle_log = np.zeros(n)

    if isinstance(system, PolyModel):
        if system.sample_time != dt:
            raise ConfigError(
                f"model sample time {system.sample_time} differs from signal "
                f"sample time {dt}")
        if not _effective_delay_ok(system):
            raise ConfigError(
                "closed-loop simulation needs at least one step of input "
                "delay (b0 must be zero)")
        if not isinstance(cfg, CascadeConfig):
            raise ConfigError("a PolyModel is simulated under a CascadeConfig")
        a = system.a
        b_full = system.b_full()
        y_hist = np.zeros(n)
        u_hist = np.zeros(n)
        state = CascadeState()
        angle = 0.0
        for k in range(n):
            acc = 0.0
            for i in range(1, len(a)):
                if k - i >= 0:
                    acc -= a[i] * y_hist[k - i]
            for j in range(1, len(b_full)):
                if k - j >= 0:
                    acc += b_full[j] * u_hist[k - j]
            rate = acc
            angle = angle + rate * dt
            if not (math.isfinite(rate) and abs(rate) <= bound
                    and abs(angle) <= bound):
                raise DivergenceError(
                    f"closed-loop response exceeded {bound} at step {k}",
                    step=k)
            u_cmd, state = cascade_step(cfg, r[k], angle, rate, d[k], dt, state)
            y_hist[k] = rate
            u_hist[k] = u_cmd
            u_log[k] = u_cmd
            rate_log[k] = rate
            angle_log[k] = angle
        loop_mode = "closed"

    elif isinstance(system, StateSpace):
        K = np.atleast_2d(np.asarray(cfg, dtype=float))
        if K.shape != (system.B.shape[1], system.n_states):
            raise ConfigError(
                f"gain must be {system.B.shape[1]}x{system.n_states}, "
                f"got {K.shape}")
        if system.sample_time != dt:
            raise ConfigError("realization sample time differs from signals")
        x = np.zeros((system.n_states, 1))
        angle = 0.0
        for k in range(n):
            u_cmd = float(r[k] - (K @ x)[0, 0] + d[k])
            rate = float((system.C @ x + system.D * u_cmd)[0, 0])
            angle = angle + rate * dt
            if not (math.isfinite(rate) and abs(rate) <= bound
                    and abs(angle) <= bound):
                raise DivergenceError(
                    f"closed-loop response exceeded {bound} at step {k}",
                    step=k)
            x = system.A @ x + system.B * u_cmd
            u_log[k] = u_cmd
            rate_log[k] = rate
            angle_log[k] = angle
        loop_mode = "closed"

    elif callable(system):
        # adapter protocol: system(u_cmd) advances the plant one control
        # interval and returns the (rate, angle) measurement at its end;
        # row k logs the measurement the controller acted on
        if not isinstance(cfg, CascadeConfig):
            raise ConfigError("a plant adapter is simulated under a CascadeConfig")
        state = CascadeState()
        rate, angle = 0.0, 0.0
        for k in range(n):
            u_cmd, state = cascade_step(cfg, r[k], angle, rate, d[k], dt, state)
            u_log[k] = u_cmd
            rate_log[k] = rate
            angle_log[k] = angle
            rate, angle = system(u_cmd)
            if not (math.isfinite(rate) and abs(rate) <= bound
                    and abs(angle) <= bound):
                raise DivergenceError(
                    f"closed-loop response exceeded {bound} at step {k}",
                    step=k)
        loop_mode = "closed"
    else:
        raise ConfigError(f"cannot simulate a {type(system).__name__}")

    return DataLog(
        config_hash="", seed=0, sample_rate_hz=1.0 / dt, channel=channel,
        axis_lock=True, loop_mode=loop_mode,
        t=t, r=r.copy(), d_s=d.copy(), u=u_log,
        y_rate=rate_log, y_angle=angle_log,
    )
