"""Uniformly sampled experiment records and their CSV form.

One row per control step: time, reference, injected excitation,
channel command entering the plant, measured rate, measured angle.
The header block carries everything needed to reproduce the run.
CSV numerics use 17 significant digits so write/read round-trips are
bit exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .signals import Signal, fmt_float

COLUMNS = ("t", "r", "d_s", "u", "y_rate", "y_angle")


@dataclass
class DataLog:
    """Logged closed- or open-loop experiment on one attitude channel."""

    config_hash: str
    seed: int
    sample_rate_hz: float
    channel: str
    axis_lock: bool
    loop_mode: str           # "closed" | "open"
    t: np.ndarray
    r: np.ndarray
    d_s: np.ndarray
    u: np.ndarray
    y_rate: np.ndarray
    y_angle: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        for name in ("r", "d_s", "u", "y_rate", "y_angle"):
            if len(getattr(self, name)) != n:
                raise DataError(f"column {name} length differs from t")
        if n >= 2:
            steps = np.diff(self.t)
            if np.any(steps <= 0):
                raise DataError("time column must be strictly increasing")

    @property
    def sample_time(self) -> float:
        return 1.0 / self.sample_rate_hz

    def __len__(self):
        return len(self.t)

    def column(self, name: str) -> Signal:
        return Signal(getattr(self, name), self.sample_time, label=name)

    def trimmed(self, seconds: float) -> "DataLog":
        """Drop the first `seconds` of startup transient."""
        k = int(round(seconds * self.sample_rate_hz))
        if k >= len(self.t):
            raise DataError(
                f"trimming {seconds} s removes the whole {len(self.t)}-row log")
        return DataLog(self.config_hash, self.seed, self.sample_rate_hz,
                       self.channel, self.axis_lock, self.loop_mode,
                       self.t[k:], self.r[k:], self.d_s[k:], self.u[k:],
                       self.y_rate[k:], self.y_angle[k:])


def write_log_csv(path, log: DataLog) -> None:
    lines = [
        "# quadid-log v1",
        f"# config_hash = {log.config_hash}",
        f"# seed = {log.seed}",
        f"# sample_rate_hz = {fmt_float(log.sample_rate_hz)}",
        f"# channel = {log.channel}",
        f"# axis_lock = {'true' if log.axis_lock else 'false'}",
        f"# loop_mode = {log.loop_mode}",
        ",".join(COLUMNS),
    ]
    cols = [getattr(log, c) for c in COLUMNS]
    for row in zip(*cols):
        lines.append(",".join(fmt_float(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_log_csv(path) -> DataLog:
    meta = {}
    rows = []
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
            if line.startswith("t,"):
                continue
            rows.append([float(v) for v in line.split(",")])
    required = ("config_hash", "seed", "sample_rate_hz", "channel",
                "axis_lock", "loop_mode")
    missing = [k for k in required if k not in meta]
    if missing:
        raise DataError(f"{path}: missing header keys {missing}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows)
    return DataLog(
        config_hash=meta["config_hash"],
        seed=int(meta["seed"]),
        sample_rate_hz=float(meta["sample_rate_hz"]),
        channel=meta["channel"],
        axis_lock=meta["axis_lock"] == "true",
        loop_mode=meta["loop_mode"],
        t=arr[:, 0], r=arr[:, 1], d_s=arr[:, 2], u=arr[:, 3],
        y_rate=arr[:, 4], y_angle=arr[:, 5],
    )
