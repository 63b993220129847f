"""Matplotlib rendering of report figures to files.

Every renderer writes a PNG next to the delimited output and returns the
path.  The Agg backend keeps the toolkit headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .datalog import DataLog
from .validation import ResidualReport

_SAVE_KWARGS = dict(dpi=120, metadata={"Software": "quadid"})


def render_correlogram(path, report: ResidualReport, title: str = "") -> str:
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=False)
    ax = axes[0]
    lags = np.arange(1, report.max_lag + 1)
    ax.stem(lags, report.autocorr, basefmt=" ")
    ax.axhline(report.bound, color="r", linestyle="--", linewidth=1)
    ax.axhline(-report.bound, color="r", linestyle="--", linewidth=1)
    ax.set_ylabel("residual autocorrelation")
    ax.set_xlabel("lag")
    verdict = "degenerate" if report.degenerate else (
        "pass" if report.whiteness_pass else "fail")
    ax.set_title(f"{title} whiteness: {verdict}".strip())
    ax.grid(True, alpha=0.3)

    ax = axes[1]
    if report.crosscorr is not None:
        lags = np.arange(-report.max_lag, report.max_lag + 1)
        ax.stem(lags, report.crosscorr, basefmt=" ")
        ax.axhline(report.bound, color="r", linestyle="--", linewidth=1)
        ax.axhline(-report.bound, color="r", linestyle="--", linewidth=1)
    ax.set_ylabel("input-residual cross-correlation")
    ax.set_xlabel("lag")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return str(path)


def render_bode(path, omegas: np.ndarray, mag_db: np.ndarray,
                phase_deg: np.ndarray, title: str = "") -> str:
    fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    axes[0].semilogx(omegas, mag_db)
    axes[0].set_ylabel("magnitude [dB]")
    axes[0].set_title(title)
    axes[0].grid(True, which="both", alpha=0.3)
    axes[1].semilogx(omegas, phase_deg)
    axes[1].set_ylabel("phase [deg]")
    axes[1].set_xlabel("frequency [rad/s]")
    axes[1].grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return str(path)


def render_traces(path, t: np.ndarray, r: np.ndarray, before: np.ndarray,
                  after: np.ndarray, lqr: np.ndarray | None = None,
                  title: str = "") -> str:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(t, r, "k--", label="reference", linewidth=1)
    ax.plot(t, before, label="before re-tune")
    ax.plot(t, after, label="after re-tune (PID)")
    if lqr is not None:
        ax.plot(t, lqr, label="after re-tune (LQR)")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("angle [rad]")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return str(path)


def render_log_overview(path, log: DataLog, title: str = "") -> str:
    fig, axes = plt.subplots(4, 1, figsize=(9, 8), sharex=True)
    axes[0].plot(log.t, log.d_s)
    axes[0].set_ylabel("d_s")
    axes[0].set_title(title or f"{log.channel} experiment ({log.loop_mode} loop)")
    axes[1].plot(log.t, log.u)
    axes[1].set_ylabel("u")
    axes[2].plot(log.t, log.y_rate)
    axes[2].set_ylabel("rate [rad/s]")
    axes[3].plot(log.t, log.y_angle)
    axes[3].set_ylabel("angle [rad]")
    axes[3].set_xlabel("time [s]")
    for ax in axes:
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return str(path)


def render_psd(path, freqs: np.ndarray, psd: np.ndarray, title: str = "") -> str:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    positive = psd > 0
    ax.semilogy(freqs[positive], psd[positive])
    ax.set_xlabel("frequency [Hz]")
    ax.set_ylabel("power spectral density")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return str(path)
