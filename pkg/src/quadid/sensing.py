"""IMU measurement model and the measurement-preparation filter chain.

Gyroscope and accelerometer readings are the true kinematic quantities
plus per-axis bias and white Gaussian noise from a seedable generator.
Rates are cleaned with a first-order low-pass filter (exact pole mapping
of an RC stage); angles are fused from the filtered rate and the
accelerometer gravity direction by a complementary filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .errors import ConfigError, DomainError
from .plant import State
from .signals import Signal


@dataclass
class SensorConfig:
    """Noise, bias, and filter settings of the measurement chain.

    Bias defaults are zero: the vehicle's values are assumed calibrated
    out upstream and are configurable here when they are not.
    """

    gyro_bias: tuple = (0.0, 0.0, 0.0)      # rad/s per axis
    gyro_noise_std: float = 0.002           # rad/s, MEMS-gyro scale
    accel_bias: tuple = (0.0, 0.0, 0.0)     # m/s^2 per axis
    accel_noise_std: float = 0.03           # m/s^2
    lpf_cutoff_hz: float = 42.0
    cf_alpha: float = 0.98
    sample_rate_hz: float = 250.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.gyro_noise_std < 0 or self.accel_noise_std < 0:
            raise ConfigError("noise standard deviations must be >= 0")
        if not 0.0 <= self.cf_alpha <= 1.0:
            raise ConfigError(f"cf_alpha must lie in [0, 1], got {self.cf_alpha}")
        if not 0.0 < self.lpf_cutoff_hz < self.sample_rate_hz / 2.0:
            raise ConfigError(
                f"lpf_cutoff_hz must lie in (0, sample_rate/2) = "
                f"(0, {self.sample_rate_hz / 2.0}), got {self.lpf_cutoff_hz}")


def sample_imu(s: State, cfg: SensorConfig, rng: np.random.Generator,
               g: float = 9.81) -> tuple[np.ndarray, np.ndarray]:
    """One gyroscope + accelerometer sample at the current state.

    The gyro measures the body rates; the accelerometer measures the
    static specific force, i.e. the gravity direction rotated into the
    body frame (level attitude reads (0, 0, g)).  Both carry bias plus
    independent white noise per axis, deterministic for a fixed
    generator state (the stream position does not depend on the noise
    levels, so noiseless and noisy runs stay draw-for-draw aligned).
    """
    if not s.is_finite():
        raise DomainError("non-finite state")
    gyro = (np.array([s.p, s.q, s.r]) + np.asarray(cfg.gyro_bias, dtype=float)
            + cfg.gyro_noise_std * rng.standard_normal(3))

    cphi, sphi = math.cos(s.phi), math.sin(s.phi)
    cth, sth = math.cos(s.theta), math.sin(s.theta)
    accel = (np.array([-g * sth, g * cth * sphi, g * cth * cphi])
             + np.asarray(cfg.accel_bias, dtype=float)
             + cfg.accel_noise_std * rng.standard_normal(3))
    return gyro, accel


def accel_angles(accel: np.ndarray) -> tuple[float, float]:
    """Roll and pitch from the measured gravity direction.

    Singular as pitch approaches +/-90 degrees; the pipeline's attitude
    cap keeps operation far from that region.
    """
    ax, ay, az = accel
    roll = math.atan2(ay, az)
    pitch = math.atan2(-ax, math.hypot(ay, az))
    return roll, pitch


def lowpass_pole(cutoff_hz: float, sample_rate_hz: float) -> float:
    """Discrete pole of the RC low-pass under exact pole mapping."""
    if not 0.0 < cutoff_hz < sample_rate_hz / 2.0:
        raise ConfigError(
            f"cutoff {cutoff_hz} Hz out of range (0, {sample_rate_hz / 2.0}) Hz")
    return math.exp(-2.0 * math.pi * cutoff_hz / sample_rate_hz)


class LowPass:
    """Streaming first-order low-pass with unity DC gain."""

    def __init__(self, cutoff_hz: float, sample_rate_hz: float, y0: float = 0.0):
        self.pole = lowpass_pole(cutoff_hz, sample_rate_hz)
        self.y = y0

    def step(self, x: float) -> float:
        self.y = (1.0 - self.pole) * x + self.pole * self.y
        return self.y


def lowpass(x: Signal, cutoff_hz: float,
            sample_rate_hz: float | None = None) -> Signal:
    """Filter a whole signal through the first-order low-pass."""
    fs = 1.0 / x.sample_time if sample_rate_hz is None else sample_rate_hz
    p = lowpass_pole(cutoff_hz, fs)
    y = scipy.signal.lfilter([1.0 - p], [1.0, -p], x.samples)
    return x.with_samples(y)


def complementary(gyro_rate: float, accel_angle: float, prev_angle: float,
                  alpha: float, dt: float) -> float:
    """One complementary-filter update blending integrated rate and accel angle."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * (prev_angle + gyro_rate * dt) + (1.0 - alpha) * accel_angle


def check_filter_rules(cutoff_hz: float, sample_rate_hz: float,
                       f_max_hz: float) -> bool:
    """Rule-of-thumb check for the filter chain.

    Passes iff the cutoff clears the highest frequency of interest by 5x
    and the sample rate clears the cutoff by 5x.
    """
    if cutoff_hz <= 0 or sample_rate_hz <= 0 or f_max_hz <= 0:
        raise DomainError("frequencies must be positive")
    return cutoff_hz > 5.0 * f_max_hz and sample_rate_hz > 5.0 * cutoff_hz


def power_spectrum(x: Signal, nperseg: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Welch-averaged periodogram, used by reports to show the absence of
    resonance peaks; never a gate."""
    fs = 1.0 / x.sample_time
    nperseg = min(nperseg, len(x.samples))
    freqs, psd = scipy.signal.welch(x.samples, fs=fs, nperseg=nperseg)
    return freqs, psd
