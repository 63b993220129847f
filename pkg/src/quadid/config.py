"""Experiment configuration: defaults, file parsing, and hashing.

Config files are plain text with `[section]` headers and `key = value`
pairs.  Every default is overridable; unknown sections or keys are
errors so typos cannot silently fall back to defaults.  The resolved
configuration has a canonical text form whose hash stamps every
artifact a run writes.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, fields

from .control import CascadeConfig, PidGains
from .errors import ConfigError
from .excitation import ExcitationBand, PRIMITIVE_TAPS, PrbsConfig, design_prbs
from .plant import QuadParams
from .sensing import SensorConfig
from .signals import fmt_float, sha256_text
from .validation import StageThresholds

CHANNELS = ("roll", "pitch", "yaw")

#: Comparison-table default candidate set (Box-Jenkins structures are
#: recognized by the parser but rejected by the estimators).
DEFAULT_GRID = ("ARMX 4-3-4-2, ARMX 3-3-3-1, ARMX 3-2-3-1, ARMX 3-2-2-1, "
                "ARMX 3-2-1-1, ARX 10-10-5, ARX 2-2-1, ARX 2-2-0, "
                "IV 4-4-5, IV 5-5-4")


@dataclass
class ExperimentSection:
    channel: str = "roll"
    loop_mode: str = "auto"          # auto: yaw open loop, roll/pitch closed
    seed: int = 12345
    duration_s: float = 0.0          # 0: one full PRBS period
    angle_cap_deg: float = 20.0
    trim_seconds: float = 2.0
    plant_dt: float = 0.001

    def resolved_loop_mode(self) -> str:
        if self.loop_mode == "auto":
            return "open" if self.channel == "yaw" else "closed"
        return self.loop_mode


@dataclass
class ExcitationSection:
    kind: str = "prbs"               # prbs | square
    omega_min: float = 0.1
    omega_max: float = 20.0
    gain_factor: float = 4.0
    amplitude_deg: float = 20.0
    amplitude: float = 0.0           # explicit command units; 0: derive from deg
    delta_t: float = 0.0             # manual switching-time override; 0: designed
    n_bits: int = 0                  # manual register-size override; 0: designed
    lfsr_seed: int = 1
    square_period_s: float = 4.0


@dataclass
class IdentifySection:
    grid: str = DEFAULT_GRID
    train_fit: float = 95.0
    val_fit: float = 55.0
    max_lag: int = 25
    stage2_rmse_frac: float = 0.10
    val_prbs_duration_s: float = 24.0
    val_square_duration_s: float = 24.0
    max_persistency: int = 50

    def thresholds(self) -> StageThresholds:
        return StageThresholds(train_fit=self.train_fit, val_fit=self.val_fit,
                               max_lag=self.max_lag,
                               stage2_rmse_frac=self.stage2_rmse_frac)


@dataclass
class RetuneSection:
    step_deg: float = 10.0
    duration_s: float = 6.0
    outer_kp: str = "1, 2, 3, 5, 8"
    inner_kp: str = "0.5, 1.3, 2.0, 3.5"
    inner_ki: str = "0, 0.01, 0.1, 0.5"
    inner_kd: str = "0, 0.023, 0.1"
    lqr_r: float = 1.0
    settle_band: float = 0.05
    settle_weight: float = 1.0


@dataclass
class FullConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    plant: QuadParams = field(default_factory=QuadParams)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    outer: PidGains = field(default_factory=lambda: PidGains(kp=3.0))
    inner: PidGains = field(
        default_factory=lambda: PidGains(kp=1.3, ki=0.01, kd=0.023))
    excitation: ExcitationSection = field(default_factory=ExcitationSection)
    identify: IdentifySection = field(default_factory=IdentifySection)
    retune: RetuneSection = field(default_factory=RetuneSection)

    def cascade(self) -> CascadeConfig:
        return CascadeConfig(outer=self.outer, inner=self.inner)

    def resolved_amplitude(self) -> float:
        """Excitation amplitude in command units.

        When no explicit amplitude is configured, the configured degrees
        map through the cascade's proportional chain so a sustained chip
        asymptotes to that angle (d = angle * kp_outer * kp_inner).
        """
        if self.excitation.amplitude != 0.0:
            return self.excitation.amplitude
        return (math.radians(self.excitation.amplitude_deg)
                * self.outer.kp * self.inner.kp)

    def prbs(self) -> PrbsConfig:
        """The designed PRBS, honoring manual delta_t / n_bits overrides."""
        exc = self.excitation
        band = ExcitationBand(exc.omega_min, exc.omega_max)
        designed = design_prbs(band, self.resolved_amplitude(), exc.gain_factor)
        n_bits = exc.n_bits if exc.n_bits else designed.n_bits
        if n_bits not in PRIMITIVE_TAPS:
            raise ConfigError(
                f"n_bits={n_bits} outside the shipped tap table "
                f"({min(PRIMITIVE_TAPS)}..{max(PRIMITIVE_TAPS)})")
        return PrbsConfig(
            n_bits=n_bits, taps=PRIMITIVE_TAPS[n_bits],
            delta_t=exc.delta_t if exc.delta_t else designed.delta_t,
            amplitude=designed.amplitude, seed=exc.lfsr_seed)

    def canonical_text(self) -> str:
        lines = []
        for section, obj in sorted(_section_objects(self).items()):
            lines.append(f"[{section}]")
            for f in sorted(fields(obj), key=lambda f: f.name):
                lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return sha256_text(self.canonical_text())


def _section_objects(cfg: FullConfig) -> dict:
    return {
        "experiment": cfg.experiment,
        "plant": cfg.plant,
        "sensor": cfg.sensor,
        "control_outer": cfg.outer,
        "control_inner": cfg.inner,
        "excitation": cfg.excitation,
        "identify": cfg.identify,
        "retune": cfg.retune,
    }


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return fmt_float(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


def _parse_value(text: str, f: dataclasses.Field, section: str):
    text = text.strip()
    tp = f.type
    try:
        if tp == "float":
            return float(text)
        if tp == "int":
            return int(text)
        if tp == "str":
            return text
        if tp == "bool":
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {text}")
        if tp == "float | None":
            return None if text.lower() == "none" else float(text)
        if tp == "tuple":
            return tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"[{section}] {f.name}: {exc}") from exc
    raise ConfigError(f"[{section}] {f.name}: unsupported field type {tp}")


def write_config(path, cfg: FullConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.canonical_text())


def load_config(path=None, overrides: dict[str, str] | None = None) -> FullConfig:
    """Build a FullConfig from defaults, an optional file, and overrides.

    overrides maps dotted keys ("experiment.seed") to value strings, the
    same grammar the file uses; they are applied after the file.
    """
    cfg = FullConfig()
    sections = _section_objects(cfg)
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        for section in parser.sections():
            if section not in sections:
                raise ConfigError(f"unknown config section [{section}]")
            obj = sections[section]
            known = {f.name: f for f in fields(obj)}
            for key, value in parser.items(section):
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                setattr(obj, key, _parse_value(value, known[key], section))
    for dotted, value in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must be section.key")
        section, key = dotted.split(".", 1)
        if section not in sections:
            raise ConfigError(f"unknown config section [{section}]")
        obj = sections[section]
        known = {f.name: f for f in fields(obj)}
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        setattr(obj, key, _parse_value(value, known[key], section))
    _validate(cfg)
    return cfg


def _validate(cfg: FullConfig) -> None:
    exp = cfg.experiment
    if exp.channel not in CHANNELS:
        raise ConfigError(f"channel must be one of {CHANNELS}, got {exp.channel!r}")
    if exp.loop_mode not in ("auto", "open", "closed"):
        raise ConfigError(f"loop_mode must be auto/open/closed, got {exp.loop_mode!r}")
    if exp.plant_dt <= 0:
        raise ConfigError("plant_dt must be positive")
    if exp.angle_cap_deg <= 0:
        raise ConfigError("angle_cap_deg must be positive")
    if cfg.excitation.kind not in ("prbs", "square"):
        raise ConfigError(f"excitation kind must be prbs or square, "
                          f"got {cfg.excitation.kind!r}")
    # re-run dataclass validation on sections whose fields were rebound
    QuadParams(**dataclasses.asdict(cfg.plant))
    SensorConfig(**dataclasses.asdict(cfg.sensor))
    PidGains(**dataclasses.asdict(cfg.outer))
    PidGains(**dataclasses.asdict(cfg.inner))
