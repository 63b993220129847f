"""Excitation design: maximal-length PRBS from a frequency band of interest.

The switching time comes from the spectral condition 0.3 / dt =
1 / (2 pi tau_min) and the raw length from the static-gain condition
N dt = (3..5) tau_max; the register size is then the smallest n whose
maximal sequence length 2^n - 1 meets the raw length, rounding up so the
static-gain condition stays an inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConfigError, DataError
from .signals import Signal

#: Feedback tap exponents of primitive polynomials x^n + ... + 1 for each
#: register size.  The suite's period test validates every entry.
PRIMITIVE_TAPS: dict[int, tuple[int, ...]] = {
    2: (2, 1),
    3: (3, 2),
    4: (4, 3),
    5: (5, 3),
    6: (6, 5),
    7: (7, 6),
    8: (8, 6, 5, 4),
    9: (9, 5),
    10: (10, 7),
    11: (11, 9),
    12: (12, 6, 4, 1),
    13: (13, 4, 3, 1),
    14: (14, 5, 3, 1),
    15: (15, 14),
    16: (16, 15, 13, 4),
}


@dataclass
class ExcitationBand:
    """Frequency band of interest [rad/s] and the matching time constants."""

    omega_min: float
    omega_max: float

    def __post_init__(self):
        if not 0.0 < self.omega_min < self.omega_max:
            raise ConfigError(
                f"need 0 < omega_min < omega_max, got "
                f"({self.omega_min}, {self.omega_max})")

    @property
    def tau_max(self) -> float:
        return 1.0 / self.omega_min

    @property
    def tau_min(self) -> float:
        return 1.0 / self.omega_max


@dataclass
class PrbsConfig:
    """Shift-register excitation: register size, taps, timing, amplitude."""

    n_bits: int
    taps: tuple[int, ...]
    delta_t: float
    amplitude: float
    seed: int = 1

    def __post_init__(self):
        if self.n_bits < 2:
            raise ConfigError(f"register size must be >= 2, got {self.n_bits}")
        if self.delta_t <= 0:
            raise ConfigError(f"switching time must be > 0, got {self.delta_t}")
        if self.seed == 0:
            raise ConfigError("seed 0 is the absorbing all-zero register state")
        if max(self.taps) != self.n_bits:
            raise ConfigError(
                f"taps {self.taps} must include the register size {self.n_bits}")

    @property
    def N(self) -> int:
        """Sequence length per period, 2^n - 1."""
        return (1 << self.n_bits) - 1

    @property
    def T(self) -> float:
        """Period in seconds."""
        return self.N * self.delta_t


def design_prbs(band: ExcitationBand, amplitude: float,
                gain_factor: float = 4.0) -> PrbsConfig:
    """Size a PRBS for a band of interest.

    gain_factor is the static-gain multiple of tau_max (3..5); the
    resulting chip count is rounded up to the nearest maximal length.
    """
    if not 3.0 <= gain_factor <= 5.0:
        raise ConfigError(f"gain_factor must lie in [3, 5], got {gain_factor}")
    delta_t = 0.3 * 2.0 * math.pi * band.tau_min
    n_req = gain_factor * band.tau_max / delta_t
    n_bits = 2
    while (1 << n_bits) - 1 < n_req:
        n_bits += 1
    if n_bits > max(PRIMITIVE_TAPS):
        raise ConfigError(
            f"required register size {n_bits} exceeds the shipped tap table "
            f"(max {max(PRIMITIVE_TAPS)})")
    return PrbsConfig(n_bits=n_bits, taps=PRIMITIVE_TAPS[n_bits],
                      delta_t=delta_t, amplitude=amplitude)


def lfsr_bits(n_bits: int, taps: tuple[int, ...], seed: int, count: int) -> np.ndarray:
    """First `count` output bits of the Fibonacci shift register."""
    mask = (1 << n_bits) - 1
    state = seed & mask
    if state == 0:
        raise ConfigError("seed 0 is the absorbing all-zero register state")
    fb_idx = [n_bits - 1] + [n_bits - 1 - e for e in taps if 0 < e < n_bits]
    out = np.empty(count, dtype=np.int8)
    for i in range(count):
        out[i] = state & 1
        fb = 0
        for j in fb_idx:
            fb ^= (state >> j) & 1
        state = ((state << 1) | fb) & mask
    return out


def sequence_period(n_bits: int, taps: tuple[int, ...], seed: int = 1) -> int:
    """Exact period of the register state sequence (brute force)."""
    mask = (1 << n_bits) - 1
    state = seed & mask
    if state == 0:
        raise ConfigError("seed 0 is the absorbing all-zero register state")
    fb_idx = [n_bits - 1] + [n_bits - 1 - e for e in taps if 0 < e < n_bits]
    for step in range(1, (1 << n_bits) + 1):
        fb = 0
        for j in fb_idx:
            fb ^= (state >> j) & 1
        state = ((state << 1) | fb) & mask
        if state == (seed & mask):
            return step
    raise ConfigError(f"register never returned to its seed within 2^{n_bits} steps")


def prbs_chips(cfg: PrbsConfig, n_chips: int | None = None) -> np.ndarray:
    """Two-level chip sequence (+a rarer than -a by one per period)."""
    if n_chips is None:
        n_chips = cfg.N
    bits = lfsr_bits(cfg.n_bits, cfg.taps, cfg.seed, n_chips)
    return np.where(bits == 0, cfg.amplitude, -cfg.amplitude)


def generate_prbs(cfg: PrbsConfig, duration: float,
                  sample_time: float | None = None) -> Signal:
    """PRBS held chip-by-chip on the caller's sample grid.

    Each chip lasts delta_t (zero-order hold); chip boundaries snap to
    the nearest sample when delta_t is not a multiple of sample_time.
    """
    if duration <= 0:
        raise ConfigError(f"duration must be > 0, got {duration}")
    ts = cfg.delta_t if sample_time is None else sample_time
    n_samples = int(round(duration / ts))
    n_chips = int(math.ceil(duration / cfg.delta_t)) + 1
    chips = prbs_chips(cfg, n_chips)
    # boundaries[k] = first sample index of chip k, snapped to the grid
    boundaries = np.round(np.arange(n_chips + 1) * (cfg.delta_t / ts)).astype(int)
    idx = np.searchsorted(boundaries, np.arange(n_samples), side="right") - 1
    return Signal(chips[idx], ts, label="prbs")


def square_wave(period: float, amplitude: float, duration: float,
                sample_time: float) -> Signal:
    """Alternating +/-amplitude each half period, starting positive."""
    if period <= 2.0 * sample_time:
        raise ConfigError(
            f"period {period} must exceed two sample intervals ({2 * sample_time})")
    n = int(round(duration / sample_time))
    t = np.arange(n) * sample_time
    half = np.floor(t / (period / 2.0)).astype(int)
    return Signal(np.where(half % 2 == 0, amplitude, -amplitude), sample_time,
                  label="square")


def persistency_order(u: Signal, max_order: int, rel_tol: float = 1e-8) -> int:
    """Largest order r <= max_order whose r x r input covariance matrix
    stays positive definite; bounds the identifiable model order."""
    x = u.samples
    n = len(x)
    if n < 4 * max_order:
        raise DataError(
            f"signal of {n} samples is too short for order {max_order}")
    c = np.array([np.dot(x[: n - k], x[k:]) / n for k in range(max_order)])
    if c[0] <= 0:
        return 0
    tol = rel_tol * c[0]
    order = 0
    for r in range(1, max_order + 1):
        m = scipy.linalg.toeplitz(c[:r])
        if np.linalg.eigvalsh(m)[0] > tol:
            order = r
        else:
            break
    return order
