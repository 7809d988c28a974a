"""Discharge-rate control law with clamping, zone overrides and the blast button.

The rate law is

    d = (s + k3*|omega|) * A * (1 + k1*dT) * (1 + k2*|theta|)

with ``d`` in lb/hour, ``s`` in mph, ``omega`` in deg/s, ``theta`` in degrees and
``A`` in lb/lane-mile.  It collapses to ``d = s*A`` when dT, theta and omega are 0.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Optional

from .errors import InputError
from .telemetry import SensorSample


class Material(IntEnum):
    SALT = 0
    ALTERNATIVE = 1
    NONE = 2


class Pattern(IntEnum):
    FULL = 0
    LEFT = 1
    RIGHT = 2


@dataclass(frozen=True)
class ControllerConfig:
    base_rate_A: float = 150.0
    k1: float = 0.05
    k2_incline: float = 0.06
    k2_decline: float = 0.06
    k3: float = 2.5
    rate_min: float = 150.0
    rate_max: float = 350.0
    expected_temp_f: Optional[float] = None
    speed_floor: float = 1.0
    blast_duration_ms: int = 10_000
    lane_width_default: float = 1.0

    def __post_init__(self):
        for name in ("k1", "k2_incline", "k2_decline", "k3"):
            if not getattr(self, name) >= 0:
                raise InputError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 < self.rate_min <= self.base_rate_A <= self.rate_max:
            raise InputError(
                "need 0 < rate_min <= base_rate_A <= rate_max, got "
                f"{self.rate_min}, {self.base_rate_A}, {self.rate_max}"
            )
        if not self.speed_floor > 0:
            raise InputError("speed_floor must be > 0")
        if not self.blast_duration_ms > 0:
            raise InputError("blast_duration_ms must be > 0")
        if not self.lane_width_default > 0:
            raise InputError("lane_width_default must be > 0")

    def replace(self, **changes) -> "ControllerConfig":
        return dataclasses.replace(self, **changes)

    def delta_t(self, pavement_temp_f: Optional[float]) -> float:
        """Expected minus actual pavement temperature; 0 when either is unknown."""
        if self.expected_temp_f is None or pavement_temp_f is None:
            return 0.0
        if isinstance(pavement_temp_f, float) and math.isnan(pavement_temp_f):
            return 0.0
        return self.expected_temp_f - pavement_temp_f

    # flat key = value file ------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if v is None else repr(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ControllerConfig":
        types = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep:
                raise InputError(f"{source}:{lineno}: expected 'key = value'")
            if key not in types:
                raise InputError(f"{source}:{lineno}: unknown key {key!r}")
            try:
                if val.lower() in ("none", ""):
                    if key != "expected_temp_f":
                        raise ValueError(f"{key} may not be empty")
                    values[key] = None
                elif key == "blast_duration_ms":
                    values[key] = int(val)
                else:
                    values[key] = float(val)
            except ValueError as exc:
                raise InputError(f"{source}:{lineno}: {exc}") from None
        try:
            return cls(**values)
        except InputError as exc:
            raise InputError(f"{source}: {exc}") from None


PRESETS = {
    "tsp-2018": ControllerConfig(),
    "tsp-initial": ControllerConfig(k2_incline=0.04, k2_decline=0.08),
    "nysdot-general": ControllerConfig(base_rate_A=160.0),
}


def load_config(name_or_path: str | None, config_dir: str | Path | None = None) -> ControllerConfig:
    """Resolve a preset name, then ``<config_dir>/<name>.cfg``, then a file path."""
    if name_or_path is None:
        return PRESETS["tsp-2018"]
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]
    candidates = []
    if config_dir:
        candidates.append(Path(config_dir) / f"{name_or_path}.cfg")
    candidates.append(Path(name_or_path))
    for path in candidates:
        if path.is_file():
            return ControllerConfig.from_text(path.read_text(encoding="utf-8"), str(path))
    raise InputError(f"unknown config preset or file: {name_or_path}")


# ---------------------------------------------------------------------------
# rate law
# ---------------------------------------------------------------------------


def base_discharge(speed: float, A: float) -> float:
    return speed * A


def temp_factor(delta_t_f: float, k1: float) -> float:
    return max(1.0 + k1 * delta_t_f, 0.0)


def geometry_factor(theta_deg: float, cfg: ControllerConfig) -> float:
    k2 = cfg.k2_incline if theta_deg >= 0 else cfg.k2_decline
    return 1.0 + k2 * abs(theta_deg)


def speed_term(speed: float, omega_dps: float, k3: float) -> float:
    return speed + k3 * abs(omega_dps)


def full_discharge(speed: float, delta_t_f: float, theta_deg: float, omega_dps: float,
                   cfg: ControllerConfig) -> float:
    """Pre-clamp discharge in lb/hour; zero at or below the speed floor."""
    if speed <= cfg.speed_floor:
        return 0.0
    return (
        speed_term(speed, omega_dps, cfg.k3)
        * cfg.base_rate_A
        * temp_factor(delta_t_f, cfg.k1)
        * geometry_factor(theta_deg, cfg)
    )


def effective_rate(discharge: float, speed: float, cfg: ControllerConfig) -> float:
    if speed <= cfg.speed_floor:
        raise InputError("rate undefined at rest")
    return min(max(discharge / speed, cfg.rate_min), cfg.rate_max)


# ---------------------------------------------------------------------------
# stateful step
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControllerState:
    blast_until_ms: Optional[int] = None
    current_width: float = 1.0
    current_material: Material = Material.SALT

    def blast_active(self, now_ms: int) -> bool:
        return self.blast_until_ms is not None and now_ms < self.blast_until_ms


def initial_state(cfg: ControllerConfig) -> ControllerState:
    return ControllerState(current_width=cfg.lane_width_default)


def trigger_blast(state: ControllerState, now_ms: int, cfg: ControllerConfig) -> ControllerState:
    """Start (or restart) a blast window of ``blast_duration_ms`` at ``now_ms``."""
    return dataclasses.replace(state, blast_until_ms=int(now_ms) + cfg.blast_duration_ms)


@dataclass(frozen=True)
class ZoneSummary:
    rate_multiplier: float = 1.0
    width_override: Optional[float] = None
    material_override: Optional[Material] = None
    pattern_override: Optional[Pattern] = None
    stop: bool = False


NO_ZONES = ZoneSummary()


@dataclass(frozen=True)
class Factors:
    speed_term: float
    temp: float
    geometry: float
    zone_multiplier: float
    pre_clamp_discharge: float


@dataclass(frozen=True)
class StepOutput:
    discharge_lb_per_hr: float
    effective_rate: float
    width: float
    material: Material
    pattern: Pattern
    blast_active: bool
    factors: Factors


def step(state: ControllerState, sample: SensorSample, zones: ZoneSummary,
         cfg: ControllerConfig) -> tuple[ControllerState, StepOutput]:
    """One control decision for a filtered sample.

    Order: rate law, zone multiplier, clamp, blast, then stop / material-none
    (which zero the output regardless of everything else).
    """
    s = sample.speed
    dt = cfg.delta_t(sample.pavement_temp_f)
    st = speed_term(s, sample.omega_dps, cfg.k3)
    tf = temp_factor(dt, cfg.k1)
    gf = geometry_factor(sample.incline_deg, cfg)
    pre = full_discharge(s, dt, sample.incline_deg, sample.omega_dps, cfg)
    mult = zones.rate_multiplier

    width = zones.width_override if zones.width_override is not None else state.current_width
    material = zones.material_override if zones.material_override is not None else state.current_material
    pattern = zones.pattern_override if zones.pattern_override is not None else Pattern.FULL
    blast = state.blast_active(sample.t_ms)
    if state.blast_until_ms is not None and not blast:
        state = dataclasses.replace(state, blast_until_ms=None)

    if s <= cfg.speed_floor:
        rate = 0.0
    else:
        rate = min(max(pre / s * mult, cfg.rate_min), cfg.rate_max)
        if blast:
            rate = cfg.rate_max
    if zones.stop or mult == 0.0 or material == Material.NONE:
        rate = 0.0
        material = Material.NONE

    out = StepOutput(
        discharge_lb_per_hr=rate * s * width,
        effective_rate=rate,
        width=width,
        material=material,
        pattern=pattern,
        blast_active=blast,
        factors=Factors(st, tf, gf, mult, pre),
    )
    return state, out
