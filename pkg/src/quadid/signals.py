"""Uniformly sampled scalar signals and their on-disk form."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

FLOAT_FMT = "%.17g"  # round-trips IEEE doubles exactly


@dataclass
class Signal:
    """Ordered real samples on a uniform time grid.

    Attributes:
        samples: sample values, finite floats.
        sample_time: spacing of the grid in seconds (> 0).
        label: channel name, free-form.
    """

    samples: np.ndarray
    sample_time: float
    label: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.sample_time <= 0:
            raise ConfigError(f"sample_time must be positive, got {self.sample_time}")
        if self.samples.ndim != 1:
            raise DataError("a Signal holds a single channel (1-d samples)")
        if not np.all(np.isfinite(self.samples)):
            raise DataError(f"signal {self.label!r} contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) * self.sample_time

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) * self.sample_time

    def with_samples(self, samples: np.ndarray, label: str | None = None) -> "Signal":
        return Signal(samples, self.sample_time, self.label if label is None else label)


def fmt_float(x: float) -> str:
    return FLOAT_FMT % float(x)


def write_signal_csv(path, sig: Signal, extra_header: dict | None = None) -> None:
    """Write a signal as `# key = value` metadata plus a t,value table."""
    lines = ["# quadid-signal v1"]
    lines.append(f"# sample_time = {fmt_float(sig.sample_time)}")
    lines.append(f"# label = {sig.label}")
    for k, v in (extra_header or {}).items():
        lines.append(f"# {k} = {v}")
    lines.append("t,value")
    for i, v in enumerate(sig.samples):
        lines.append(f"{fmt_float(i * sig.sample_time)},{fmt_float(v)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_signal_csv(path) -> Signal:
    meta = {}
    values = []
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
            values.append(float(line.split(",")[1]))
    if "sample_time" not in meta:
        raise DataError(f"{path}: missing sample_time header")
    return Signal(np.array(values), float(meta["sample_time"]), meta.get("label", ""))


def sha256_text(text: str, digits: int = 12) -> str:
    """Short stable hash used to stamp artifacts with their configuration."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:digits]
