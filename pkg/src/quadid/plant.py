"""Nonlinear continuous-time quadrotor rigid-body model.

Implements the standard cross-configuration dynamics: translational
accelerations driven by total thrust through the attitude rotation,
angular accelerations driven by the control moments with inertia
coupling and the propeller gyroscopic terms, a four-rotor force mixer,
and first-order rotor-speed dynamics.  Euler angle rates are identified
with body rates (p = roll rate, q = pitch rate, r = yaw rate), the
small-angle regime the surrounding pipeline enforces with its 20 degree
attitude cap.

Integration is a fixed-step classical Runge-Kutta scheme; rotor speeds
are advanced by the exact discretization of their first-order lag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import DivergenceError, DomainError

HALF_SQRT2 = math.sqrt(2.0) / 2.0

#: Any state component beyond this magnitude aborts integration: the
#: open-loop plant is unstable and must fail fast instead of emitting NaNs.
DIVERGENCE_BOUND = 1e6


@dataclass
class QuadParams:
    """Physical constants of the vehicle.

    Attributes:
        m: total mass [kg]
        Ix, Iy, Iz: principal moments of inertia [kg m^2]
        Jr: propeller-rotor inertia [kg m^2]
        l: arm length, centre of gravity to rotor [m]
        g: gravitational acceleration [m/s^2]
        h: cross-configuration geometric factor, exactly sqrt(2)/2
        kappa: yaw drag-to-thrust ratio (1.0 keeps the plain +/-1 mixer row)
        tau_m: motor first-order time constant [s]
    """

    m: float = 1.2
    Ix: float = 0.015
    Iy: float = 0.015
    Iz: float = 0.028
    Jr: float = 6.0e-5
    l: float = 0.23
    g: float = 9.81
    h: float = HALF_SQRT2
    kappa: float = 1.0
    tau_m: float = 0.05

    def __post_init__(self):
        for name in ("m", "Ix", "Iy", "Iz", "Jr", "l", "g", "kappa", "tau_m"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"QuadParams.{name} must be finite and > 0, got {v}")
        if self.h != HALF_SQRT2:
            raise DomainError(f"QuadParams.h must be sqrt(2)/2 exactly, got {self.h}")


@dataclass
class State:
    """Rigid-body state plus rotor speeds.

    Positions [m], velocities [m/s], angles [rad], body rates [rad/s]
    (p = phi_dot, q = theta_dot, r = psi_dot in the linear regime),
    rotor speeds [rad/s].
    """

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0
    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0
    p: float = 0.0
    q: float = 0.0
    r: float = 0.0
    w1: float = 0.0
    w2: float = 0.0
    w3: float = 0.0
    w4: float = 0.0

    def rigid_body(self) -> tuple:
        """The 12 integrated components, rotor speeds excluded."""
        return (self.x, self.y, self.z, self.vx, self.vy, self.vz,
                self.phi, self.theta, self.psi, self.p, self.q, self.r)

    def replace_rigid_body(self, rb: tuple) -> "State":
        return State(*rb, self.w1, self.w2, self.w3, self.w4)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (*self.rigid_body(),
                                              self.w1, self.w2, self.w3, self.w4))


@dataclass
class ControlVector:
    """Total thrust U1 [N] and roll/pitch/yaw moments U2..U4 [N m]."""

    U1: float = 0.0
    U2: float = 0.0
    U3: float = 0.0
    U4: float = 0.0

    def __post_init__(self):
        vals = (self.U1, self.U2, self.U3, self.U4)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError(f"non-finite control vector {vals}")
        if self.U1 < 0:
            raise DomainError(f"total thrust must be non-negative, got {self.U1}")


@dataclass
class RotorSet:
    """Per-rotor thrusts [N] and the gyroscopic speed sum [rad/s]."""

    F1: float
    F2: float
    F3: float
    F4: float
    omega_bar: float = 0.0


@dataclass
class StateDerivative:
    """Time derivative of the 12 rigid-body components."""

    x_dot: float
    y_dot: float
    z_dot: float
    vx_dot: float
    vy_dot: float
    vz_dot: float
    phi_dot: float
    theta_dot: float
    psi_dot: float
    p_dot: float
    q_dot: float
    r_dot: float

    def as_tuple(self) -> tuple:
        return (self.x_dot, self.y_dot, self.z_dot,
                self.vx_dot, self.vy_dot, self.vz_dot,
                self.phi_dot, self.theta_dot, self.psi_dot,
                self.p_dot, self.q_dot, self.r_dot)


def mix_forces(F: RotorSet, params: QuadParams) -> ControlVector:
    """Map the four rotor thrusts to thrust and body moments.

    U1 is the plain thrust sum; the roll/pitch rows carry the moment arm
    l*h (arm length projected onto the body axes of the cross frame);
    the yaw row is scaled by the drag-to-thrust ratio kappa.
    """
    thrusts = (F.F1, F.F2, F.F3, F.F4)
    for i, f in enumerate(thrusts, start=1):
        if not math.isfinite(f) or f < 0:
            raise DomainError(f"rotor thrust F{i} must be finite and >= 0, got {f}")
    lh = params.l * params.h
    return ControlVector(
        U1=F.F1 + F.F2 + F.F3 + F.F4,
        U2=lh * (F.F1 - F.F2 - F.F3 + F.F4),
        U3=lh * (F.F1 + F.F2 - F.F3 - F.F4),
        U4=params.kappa * (F.F1 - F.F2 + F.F3 - F.F4),
    )


def gyro_sum(w1: float, w2: float, w3: float, w4: float) -> float:
    """Residual propeller speed sum entering the gyroscopic terms.

    The rotor grouping (w1 - w3 + w2 - w4) is kept behind this single
    function so the pairing convention can be swapped in one place.
    """
    if not all(math.isfinite(w) for w in (w1, w2, w3, w4)):
        raise DomainError(f"non-finite rotor speeds {(w1, w2, w3, w4)}")
    return w1 - w3 + w2 - w4


def _rb_derivatives(rb: tuple, U: ControlVector, omega_bar: float,
                    p_: QuadParams) -> tuple:
    """Unchecked fast path over a plain 12-tuple (hot loop of the integrator)."""
    (_x, _y, _z, vx, vy, vz, phi, theta, psi, p, q, r) = rb
    cphi, sphi = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cpsi, spsi = math.cos(psi), math.sin(psi)

    ax = (cphi * sth * cpsi + sphi * spsi) * U.U1 / p_.m
    ay = (cphi * sth * spsi - sphi * cpsi) * U.U1 / p_.m
    # grouped so that the hover trim (U1 = m g, level attitude) is an
    # exact floating-point equilibrium
    az = (cphi * cth * U.U1 - p_.m * p_.g) / p_.m

    p_dot = (U.U2 + (p_.Iy - p_.Iz) * r * q - p_.Jr * omega_bar * q) / p_.Ix
    q_dot = (U.U3 + (p_.Iz - p_.Ix) * r * p - p_.Jr * omega_bar * p) / p_.Iy
    r_dot = (U.U4 + (p_.Ix - p_.Iy) * p * q) / p_.Iz

    return (vx, vy, vz, ax, ay, az, p, q, r, p_dot, q_dot, r_dot)


def rigid_body_derivatives(s: State, U: ControlVector, omega_bar: float,
                           params: QuadParams) -> StateDerivative:
    """Evaluate the rigid-body equations of motion at one state.

    Returns position, velocity, angle, and rate derivatives including the
    inertia-coupling products and the gyroscopic terms proportional to
    Jr * omega_bar.
    """
    if not s.is_finite():
        raise DomainError("non-finite state")
    if not math.isfinite(omega_bar):
        raise DomainError(f"non-finite omega_bar {omega_bar}")
    return StateDerivative(*_rb_derivatives(s.rigid_body(), U, omega_bar, params))


def motor_step(w: float, w_cmd: float, tau_m: float, dt: float) -> float:
    """Advance a first-order rotor-speed lag by dt, exactly.

    Closed form of w_dot = (w_cmd - w) / tau_m; never overshoots and is
    a fixed point at w = w_cmd.
    """
    if dt <= 0 or tau_m <= 0:
        raise DomainError(f"dt and tau_m must be positive, got dt={dt} tau_m={tau_m}")
    return w_cmd + (w - w_cmd) * math.exp(-dt / tau_m)


def step_rk4(s: State, U: ControlVector, dt: float, params: QuadParams,
             w_cmd: tuple | None = None,
             bound: float = DIVERGENCE_BOUND) -> State:
    """One classical RK4 step of the rigid body under constant inputs.

    The control vector and the gyroscopic sum are held over the step;
    rotor speeds are advanced by their exact first-order lag toward
    w_cmd (unchanged when w_cmd is None).

    Raises:
        DivergenceError: when any state component exceeds `bound`.
    """
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    omega_bar = gyro_sum(s.w1, s.w2, s.w3, s.w4)
    y0 = s.rigid_body()

    k1 = _rb_derivatives(y0, U, omega_bar, params)
    y1 = tuple(a + 0.5 * dt * b for a, b in zip(y0, k1))
    k2 = _rb_derivatives(y1, U, omega_bar, params)
    y2 = tuple(a + 0.5 * dt * b for a, b in zip(y0, k2))
    k3 = _rb_derivatives(y2, U, omega_bar, params)
    y3 = tuple(a + dt * b for a, b in zip(y0, k3))
    k4 = _rb_derivatives(y3, U, omega_bar, params)

    rb = tuple(a + (dt / 6.0) * (b + 2.0 * c + 2.0 * d + e)
               for a, b, c, d, e in zip(y0, k1, k2, k3, k4))

    if w_cmd is None:
        w_next = (s.w1, s.w2, s.w3, s.w4)
    else:
        w_next = tuple(motor_step(w, wc, params.tau_m, dt)
                       for w, wc in zip((s.w1, s.w2, s.w3, s.w4), w_cmd))

    for v in rb:
        if not (math.isfinite(v) and abs(v) <= bound):
            raise DivergenceError(
                f"state component {v} exceeded the magnitude bound {bound}")
    return State(*rb, *w_next)


def trim_hover(params: QuadParams) -> tuple[State, ControlVector]:
    """Hover equilibrium: zero state with thrust exactly balancing weight."""
    return State(), ControlVector(U1=params.m * params.g)
