"""Route traces: CSV ingestion, causal noise filtering, and road geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import _kernels
from .errors import InputError

TRACE_HEADER = "t_ms,speed_mph,incline_deg,omega_dps,pavement_temp_f"
NOMINAL_PERIOD_MS = 10
MAX_INCLINE_DEG = 45.0
MAX_OMEGA_DPS = 90.0
DEFAULT_SPEED_FLOOR_MPH = 1.0


@dataclass(frozen=True)
class SensorSample:
    t_ms: int
    speed: float
    incline_deg: float
    omega_dps: float
    pavement_temp_f: Optional[float] = None


@dataclass(frozen=True)
class FilterConfig:
    window_ms: int = 500

    def __post_init__(self):
        if int(self.window_ms) <= 0:
            raise InputError(f"window_ms must be positive, got {self.window_ms}")


@dataclass(frozen=True, eq=False)
class Trace:
    """Column-oriented sensor trace.

    ``pavement_temp_f`` holds NaN where the temperature was not reported.
    """

    t_ms: np.ndarray
    speed: np.ndarray
    incline_deg: np.ndarray
    omega_dps: np.ndarray
    pavement_temp_f: np.ndarray
    route_id: str = "route"
    _validated: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        n = self.t_ms.shape[0]
        if n == 0:
            raise InputError("trace is empty")
        for name in ("speed", "incline_deg", "omega_dps", "pavement_temp_f"):
            if getattr(self, name).shape != (n,):
                raise InputError(f"column {name} has wrong length")
        if not self._validated:
            _check_columns(self.t_ms, self.speed, self.incline_deg, self.omega_dps)

    def __len__(self) -> int:
        return self.t_ms.shape[0]

    def __getitem__(self, i: int) -> SensorSample:
        temp = self.pavement_temp_f[i]
        return SensorSample(
            int(self.t_ms[i]),
            float(self.speed[i]),
            float(self.incline_deg[i]),
            float(self.omega_dps[i]),
            None if math.isnan(temp) else float(temp),
        )

    def __iter__(self) -> Iterator[SensorSample]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.route_id == other.route_id
            and np.array_equal(self.t_ms, other.t_ms)
            and np.array_equal(self.speed, other.speed)
            and np.array_equal(self.incline_deg, other.incline_deg)
            and np.array_equal(self.omega_dps, other.omega_dps)
            and np.array_equal(self.pavement_temp_f, other.pavement_temp_f, equal_nan=True)
        )

    @classmethod
    def from_samples(cls, samples, route_id: str = "route") -> "Trace":
        samples = list(samples)
        temps = [np.nan if s.pavement_temp_f is None else s.pavement_temp_f for s in samples]
        return cls(
            np.array([s.t_ms for s in samples], dtype=np.int64),
            np.array([s.speed for s in samples], dtype=np.float64),
            np.array([s.incline_deg for s in samples], dtype=np.float64),
            np.array([s.omega_dps for s in samples], dtype=np.float64),
            np.array(temps, dtype=np.float64),
            route_id,
        )

    def with_columns(self, **cols) -> "Trace":
        base = dict(
            t_ms=self.t_ms,
            speed=self.speed,
            incline_deg=self.incline_deg,
            omega_dps=self.omega_dps,
            pavement_temp_f=self.pavement_temp_f,
            route_id=self.route_id,
        )
        base.update(cols)
        return Trace(**base)

    def gaps(self, period_ms: int = NOMINAL_PERIOD_MS) -> np.ndarray:
        """Indices ``i`` where the interval ending at sample ``i`` exceeds 1.5 periods."""
        dt = np.diff(self.t_ms)
        return np.flatnonzero(dt > 1.5 * period_ms) + 1

    @property
    def duration_ms(self) -> int:
        return int(self.t_ms[-1] - self.t_ms[0])


def _check_columns(t_ms, speed, incline, omega, first_row=1):
    """Raise InputError naming the first offending row; sample 0 is ``first_row``."""
    bad = np.flatnonzero(np.diff(t_ms) <= 0)
    if bad.size:
        raise InputError(f"non-monotone timestamp at row {bad[0] + 1 + first_row}")
    checks = (
        (~(speed >= 0) | ~np.isfinite(speed), "speed_mph must be finite and >= 0"),
        (~(np.abs(incline) < MAX_INCLINE_DEG), f"|incline_deg| must be < {MAX_INCLINE_DEG:g}"),
        (~(np.abs(omega) < MAX_OMEGA_DPS), f"|omega_dps| must be < {MAX_OMEGA_DPS:g}"),
    )
    for mask, msg in checks:
        rows = np.flatnonzero(mask)
        if rows.size:
            raise InputError(f"{msg} at row {rows[0] + first_row}")


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def format_float(x: float) -> str:
    """Fixed six-decimal rendering with trailing zeros trimmed ("30.0", "-3.433630").

    Deterministic in the value, so parse -> emit is a fixed point.
    """
    s = f"{x:.6f}".rstrip("0")
    if s.endswith("."):
        s += "0"
    if s == "-0.0":
        s = "0.0"
    return s


def parse_trace(data: bytes | str, route_id: str = "route") -> Trace:
    """Parse trace CSV bytes.  Errors name the 1-based line number."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InputError(f"trace is not UTF-8: {exc}") from None
    lines = data.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise InputError("trace is empty: missing header")
    header = [h.strip() for h in lines[0].rstrip("\r").split(",")]
    expected = TRACE_HEADER.split(",")
    missing = [c for c in expected if c not in header]
    if missing:
        raise InputError(f"missing required column(s): {', '.join(missing)}")
    col = [header.index(c) for c in expected]
    ncols = len(header)

    n = len(lines) - 1
    if n == 0:
        raise InputError("trace has a header but no rows")
    t = np.empty(n, dtype=np.int64)
    vals = np.empty((n, 4), dtype=np.float64)
    i_t, i_s, i_inc, i_w, i_temp = col
    for k in range(n):
        row = k + 2
        parts = lines[k + 1].rstrip("\r").split(",")
        if len(parts) != ncols:
            raise InputError(f"row {row}: expected {ncols} fields, got {len(parts)}")
        try:
            t[k] = int(parts[i_t])
            vals[k, 0] = float(parts[i_s])
            vals[k, 1] = float(parts[i_inc])
            vals[k, 2] = float(parts[i_w])
            temp = parts[i_temp].strip()
            vals[k, 3] = float(temp) if temp else np.nan
        except ValueError as exc:
            raise InputError(f"row {row}: {exc}") from None
        if k and t[k] <= t[k - 1]:
            raise InputError(f"non-monotone timestamp at row {row}")
    speed, inc, om = vals[:, 0].copy(), vals[:, 1].copy(), vals[:, 2].copy()
    _check_columns(t, speed, inc, om, first_row=2)
    return Trace(t, speed, inc, om, vals[:, 3].copy(), route_id, _validated=True)


def emit_trace(trace: Trace) -> bytes:
    out = [TRACE_HEADER]
    ff = format_float
    for t, s, inc, om, temp in zip(
        trace.t_ms.tolist(),
        trace.speed.tolist(),
        trace.incline_deg.tolist(),
        trace.omega_dps.tolist(),
        trace.pavement_temp_f.tolist(),
    ):
        tt = "" if temp != temp else ff(temp)
        out.append(f"{t},{ff(s)},{ff(inc)},{ff(om)},{tt}")
    out.append("")
    return "\n".join(out).encode("utf-8")


# ---------------------------------------------------------------------------
# filtering and geometry
# ---------------------------------------------------------------------------


def moving_average(trace: Trace, cfg: FilterConfig = FilterConfig()) -> Trace:
    """Trailing mean of incline and angular velocity over the last ``window_ms``.

    Speed and temperature pass through untouched.
    """
    w = int(cfg.window_ms)
    return Trace(
        trace.t_ms,
        trace.speed,
        _kernels.trailing_mean(trace.t_ms, trace.incline_deg, w),
        _kernels.trailing_mean(trace.t_ms, trace.omega_dps, w),
        trace.pavement_temp_f,
        trace.route_id,
        _validated=True,
    )


def grade_to_angle(grade_pct: float) -> float:
    """Road grade in percent to incline angle in degrees."""
    if not abs(grade_pct) < 100:
        raise InputError(f"|grade_pct| must be < 100, got {grade_pct}")
    return math.degrees(math.atan(grade_pct / 100.0))


def angle_to_grade(angle_deg: float) -> float:
    return 100.0 * math.tan(math.radians(angle_deg))


def curvature(omega_dps, speed_mph, speed_floor: float = DEFAULT_SPEED_FLOOR_MPH):
    """Path curvature in 1/ft from yaw rate and speed.

    Works elementwise on arrays.  Raises if any speed is at or below the floor.
    """
    speed = np.asarray(speed_mph, dtype=np.float64)
    if np.any(speed <= speed_floor):
        raise InputError("curvature undefined at rest")
    kappa = np.radians(omega_dps) / (speed * _kernels.MPH_TO_FPS)
    return float(kappa) if kappa.ndim == 0 else kappa
