"""Route replay at fixed chainage steps, salt accounting and synthetic routes."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from . import _kernels
from .controller import (
    ControllerConfig,
    Factors,
    Material,
    Pattern,
    StepOutput,
)
from .errors import InputError, InvariantError
from .rfid import Command, Placement, ReaderState, RoadsideTag, advance, on_tag_read, summarize
from .telemetry import NOMINAL_PERIOD_MS, SensorSample, Trace, format_float, grade_to_angle

FT_PER_MILE = 5280.0
STEP_FT = 2.0
# tolerance on chainage comparisons, feet
_EPS_FT = 1e-6


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RouteFrame:
    """Everything about a replay that does not depend on the controller constants."""

    trace: Trace
    step_ft: float
    chainage_ft: np.ndarray
    sample_index: np.ndarray
    zone_multiplier: np.ndarray
    width_override: np.ndarray  # NaN where no WidthSet zone is active
    material_override: np.ndarray  # -1 where no MaterialSet zone is active
    pattern_override: np.ndarray  # -1 where no PatternSet zone is active
    stop: np.ndarray
    blast_presses_ms: tuple[int, ...] = ()

    def __len__(self) -> int:
        return self.chainage_ft.shape[0]

    @property
    def speed(self) -> np.ndarray:
        return self.trace.speed[self.sample_index]

    @property
    def incline_deg(self) -> np.ndarray:
        return self.trace.incline_deg[self.sample_index]

    @property
    def omega_dps(self) -> np.ndarray:
        return self.trace.omega_dps[self.sample_index]

    @property
    def t_ms(self) -> np.ndarray:
        return self.trace.t_ms[self.sample_index]


def prepare(trace: Trace, placements: Sequence[Placement] = (), step_ft: float = STEP_FT,
            blast_presses_ms: Sequence[int] = ()) -> RouteFrame:
    """Integrate chainage, pick the causal sample for each step and resolve zones."""
    if not step_ft > 0:
        raise InputError(f"step_ft must be > 0, got {step_ft}")
    sample_chainage = _kernels.chainage(trace.t_ms, trace.speed)
    n_steps = int(math.floor((sample_chainage[-1] + _EPS_FT) / step_ft))
    if n_steps < 1:
        raise InputError(
            f"trace covers {sample_chainage[-1]:.3f} ft, shorter than one {step_ft:g} ft step"
        )
    chain = np.arange(n_steps, dtype=np.float64) * step_ft
    idx = np.searchsorted(sample_chainage, chain + _EPS_FT, side="right") - 1

    mult = np.ones(n_steps)
    width = np.full(n_steps, np.nan)
    material = np.full(n_steps, -1, dtype=np.int8)
    pattern = np.full(n_steps, -1, dtype=np.int8)
    stop = np.zeros(n_steps, dtype=bool)

    pending = sorted(placements, key=lambda p: p.chainage_ft)
    reader = ReaderState()
    nxt = 0
    summary = summarize(reader)
    for k in range(n_steps):
        c = chain[k]
        changed = False
        while nxt < len(pending) and pending[nxt].chainage_ft <= c:
            p = pending[nxt]
            reader = on_tag_read(reader, p.tag, p.chainage_ft)
            nxt += 1
            changed = True
        before = len(reader.zones)
        reader = advance(reader, c)
        if changed or len(reader.zones) != before:
            summary = summarize(reader)
        if not reader.zones:
            continue
        mult[k] = summary.rate_multiplier
        if summary.width_override is not None:
            width[k] = summary.width_override
        if summary.material_override is not None:
            material[k] = summary.material_override
        if summary.pattern_override is not None:
            pattern[k] = summary.pattern_override
        stop[k] = summary.stop

    return RouteFrame(trace, float(step_ft), chain, idx, mult, width, material, pattern, stop,
                      tuple(int(b) for b in blast_presses_ms))


@dataclass(frozen=True, eq=False)
class RouteRun:
    frame: RouteFrame
    config: ControllerConfig
    effective_rate: np.ndarray
    discharge_lb_per_hr: np.ndarray
    width: np.ndarray
    material: np.ndarray
    pattern: np.ndarray
    blast_active: np.ndarray
    speed_term: np.ndarray
    temp_factor: np.ndarray
    geometry_factor: np.ndarray
    pre_clamp_discharge: np.ndarray
    total_salt_lb: float

    @property
    def chainage_ft(self) -> np.ndarray:
        return self.frame.chainage_ft

    @property
    def step_ft(self) -> float:
        return self.frame.step_ft

    @property
    def distance_mi(self) -> float:
        return len(self.frame) * self.frame.step_ft / FT_PER_MILE

    @property
    def zone_multiplier(self) -> np.ndarray:
        return self.frame.zone_multiplier

    def __len__(self) -> int:
        return len(self.frame)

    def active_rates(self) -> np.ndarray:
        return self.effective_rate[self.effective_rate > 0]

    def step_output(self, k: int) -> StepOutput:
        return StepOutput(
            discharge_lb_per_hr=float(self.discharge_lb_per_hr[k]),
            effective_rate=float(self.effective_rate[k]),
            width=float(self.width[k]),
            material=Material(int(self.material[k])),
            pattern=Pattern(int(self.pattern[k])),
            blast_active=bool(self.blast_active[k]),
            factors=Factors(
                float(self.speed_term[k]),
                float(self.temp_factor[k]),
                float(self.geometry_factor[k]),
                float(self.frame.zone_multiplier[k]),
                float(self.pre_clamp_discharge[k]),
            ),
        )

    def steps(self) -> Iterator[tuple[float, StepOutput, SensorSample]]:
        trace = self.frame.trace
        for k in range(len(self)):
            yield float(self.chainage_ft[k]), self.step_output(k), trace[int(self.frame.sample_index[k])]


def _blast_mask(t_ms: np.ndarray, presses: Sequence[int], duration_ms: int) -> np.ndarray:
    if not presses:
        return np.zeros(t_ms.shape[0], dtype=bool)
    presses = np.asarray(sorted(presses), dtype=np.int64)
    last = np.searchsorted(presses, t_ms, side="right") - 1
    started = last >= 0
    return started & (t_ms < presses[np.maximum(last, 0)] + duration_ms)


def evaluate(frame: RouteFrame, cfg: ControllerConfig, check: bool = True) -> RouteRun:
    """Apply the controller to a prepared frame."""
    trace = frame.trace
    idx = frame.sample_index
    speed = trace.speed[idx]
    if cfg.expected_temp_f is None:
        dtemp = np.zeros(len(frame))
    else:
        dtemp = np.nan_to_num(cfg.expected_temp_f - trace.pavement_temp_f[idx], nan=0.0)
    blast = _blast_mask(trace.t_ms[idx], frame.blast_presses_ms, cfg.blast_duration_ms)

    rate, pre, st, tf, gf = _kernels.step_rates(
        speed, trace.incline_deg[idx], trace.omega_dps[idx], dtemp,
        frame.zone_multiplier, frame.stop, blast,
        cfg.base_rate_A, cfg.k1, cfg.k2_incline, cfg.k2_decline, cfg.k3,
        cfg.rate_min, cfg.rate_max, cfg.speed_floor,
    )
    width = np.where(np.isnan(frame.width_override), cfg.lane_width_default, frame.width_override)
    off = frame.stop | (frame.zone_multiplier == 0.0)
    material = np.where(frame.material_override >= 0, frame.material_override, Material.SALT)
    material = np.where(off, Material.NONE, material).astype(np.int8)
    pattern = np.where(frame.pattern_override >= 0, frame.pattern_override, Pattern.FULL).astype(np.int8)
    discharge = rate * speed * width
    total = float(np.sum(rate * width)) * (frame.step_ft / FT_PER_MILE)

    if check:
        on = rate > 0
        if np.any((rate[on] < cfg.rate_min) | (rate[on] > cfg.rate_max)):
            raise InvariantError("effective rate escaped its clamp range")
        ref = math.fsum((rate * width).tolist()) * (frame.step_ft / FT_PER_MILE)
        if abs(ref - total) > 1e-9 * max(abs(ref), 1.0):
            raise InvariantError(f"salt total {total} disagrees with compensated sum {ref}")

    return RouteRun(frame, cfg, rate, discharge, width, material, pattern, blast,
                    st, tf, gf, pre, total)


def run(trace: Trace, placements: Sequence[Placement] = (), cfg: ControllerConfig = ControllerConfig(),
        step_ft: float = STEP_FT, blast_presses_ms: Sequence[int] = ()) -> RouteRun:
    return evaluate(prepare(trace, placements, step_ft, blast_presses_ms), cfg)


@dataclass(frozen=True)
class PolicyComparison:
    flat_rate: float
    flat_rate_total_lb: float
    variable_total_lb: float
    savings_pct: float
    rate_min_seen: float
    rate_max_seen: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def flat_config(cfg: ControllerConfig, flat_rate: float) -> ControllerConfig:
    return cfg.replace(base_rate_A=flat_rate, rate_min=flat_rate, rate_max=flat_rate,
                       k1=0.0, k2_incline=0.0, k2_decline=0.0, k3=0.0)


def compare_policies(trace: Trace, placements: Sequence[Placement], cfg_variable: ControllerConfig,
                     flat_rate: float, step_ft: float = STEP_FT) -> PolicyComparison:
    if not flat_rate > 0:
        raise InputError("flat rate must be > 0")
    flat = run(trace, (), flat_config(cfg_variable, flat_rate), step_ft)
    var = run(trace, placements, cfg_variable, step_ft)
    active = var.active_rates()
    lo = float(active.min()) if active.size else 0.0
    hi = float(active.max()) if active.size else 0.0
    savings = 100.0 * (1.0 - var.total_salt_lb / flat.total_salt_lb)
    return PolicyComparison(float(flat_rate), flat.total_salt_lb, var.total_salt_lb, savings, lo, hi)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

RUN_COLUMNS = (
    "chainage_ft", "incline_deg", "omega_dps", "effective_rate", "discharge_lb_per_hr",
    "width", "material", "zone_multiplier", "blast_active",
)


def emit_run(run: RouteRun) -> tuple[bytes, bytes]:
    """Plot-ready step CSV and a JSON summary, both deterministic."""
    ff = format_float
    frame = run.frame
    buf = io.StringIO()
    buf.write(",".join(RUN_COLUMNS) + "\n")
    mat_names = {int(m): m.name.lower() for m in Material}
    for c, inc, om, r, d, w, m, z, b in zip(
        frame.chainage_ft.tolist(), frame.incline_deg.tolist(), frame.omega_dps.tolist(),
        run.effective_rate.tolist(), run.discharge_lb_per_hr.tolist(), run.width.tolist(),
        run.material.tolist(), frame.zone_multiplier.tolist(), run.blast_active.tolist(),
    ):
        buf.write(f"{ff(c)},{ff(inc)},{ff(om)},{ff(r)},{ff(d)},{ff(w)},{mat_names[m]},{ff(z)},{int(b)}\n")
    return buf.getvalue().encode("utf-8"), summary_json(run)


def summary_dict(run: RouteRun) -> dict:
    active = run.active_rates()
    per_lane = run.effective_rate * run.width * (run.step_ft / FT_PER_MILE)
    by_material = {
        m.name.lower(): float(np.sum(per_lane[run.material == m]))
        for m in (Material.SALT, Material.ALTERNATIVE)
    }
    return {
        "route_id": run.frame.trace.route_id,
        "step_ft": run.step_ft,
        "steps": len(run),
        "distance_mi": run.distance_mi,
        "total_salt_lb": run.total_salt_lb,
        "total_by_material_lb": by_material,
        "rate_min_seen": float(active.min()) if active.size else None,
        "rate_max_seen": float(active.max()) if active.size else None,
        "mean_effective_rate": float(active.mean()) if active.size else None,
        "config": run.config.__dict__,
    }


def summary_json(run: RouteRun) -> bytes:
    return (json.dumps(summary_dict(run), indent=2, sort_keys=True) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# synthetic routes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RouteSegment:
    length_ft: float
    grade_pct: float = 0.0
    radius_ft: Optional[float] = None  # signed: positive turns left; None is straight
    speed_mph: float = 30.0
    pavement_temp_f: Optional[float] = None

    def __post_init__(self):
        if not self.length_ft > 0:
            raise InputError(f"segment length must be > 0, got {self.length_ft}")
        if self.radius_ft is not None and not abs(self.radius_ft) > 100:
            raise InputError(f"curve radius must exceed 100 ft, got {self.radius_ft}")
        if not self.speed_mph > 0:
            raise InputError(f"segment speed must be > 0, got {self.speed_mph}")
        grade_to_angle(self.grade_pct)

    @property
    def omega_dps(self) -> float:
        if self.radius_ft is None:
            return 0.0
        return math.degrees(self.speed_mph * _kernels.MPH_TO_FPS / self.radius_ft)


@dataclass(frozen=True)
class RouteSpec:
    segments: tuple[RouteSegment, ...]
    incline_noise_sd: float = 0.0
    omega_noise_sd: float = 0.0
    route_id: str = "synthetic"

    def __post_init__(self):
        if not self.segments:
            raise InputError("route spec has no segments")
        if self.incline_noise_sd < 0 or self.omega_noise_sd < 0:
            raise InputError("noise standard deviations must be >= 0")

    @property
    def length_ft(self) -> float:
        return sum(s.length_ft for s in self.segments)

    def to_json(self) -> dict:
        return {
            "route_id": self.route_id,
            "segments": [s.__dict__ for s in self.segments],
            "noise": {"incline_sd": self.incline_noise_sd, "omega_sd": self.omega_noise_sd},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RouteSpec":
        try:
            segs = tuple(RouteSegment(**s) for s in obj["segments"])
            noise = obj.get("noise") or {}
            return cls(segs, float(noise.get("incline_sd", 0.0)), float(noise.get("omega_sd", 0.0)),
                       str(obj.get("route_id", "synthetic")))
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad route spec: {exc}") from None


def synth_route(spec: RouteSpec, seed: int = 0, period_ms: int = NOMINAL_PERIOD_MS) -> Trace:
    """Sample a route at a fixed period, ending at the first sample past the route end."""
    segs = spec.segments
    durations = np.array([s.length_ft / (s.speed_mph * _kernels.MPH_TO_FPS) for s in segs])
    ends_ms = np.cumsum(durations) * 1000.0
    n = int(math.ceil(ends_ms[-1] / period_ms - 1e-9)) + 1
    t_ms = np.arange(n, dtype=np.int64) * period_ms
    seg = np.minimum(np.searchsorted(ends_ms, t_ms, side="right"), len(segs) - 1)

    speed = np.array([s.speed_mph for s in segs])[seg]
    incline = np.array([grade_to_angle(s.grade_pct) for s in segs])[seg]
    omega = np.array([s.omega_dps for s in segs])[seg]
    temp = np.array([np.nan if s.pavement_temp_f is None else s.pavement_temp_f for s in segs])[seg]
    if spec.incline_noise_sd > 0 or spec.omega_noise_sd > 0:
        rng = np.random.default_rng(seed)
        incline = incline + rng.normal(0.0, spec.incline_noise_sd, n)
        omega = omega + rng.normal(0.0, spec.omega_noise_sd, n)
    # six decimals so the CSV form round-trips exactly
    return Trace(
        t_ms,
        np.round(speed, 6),
        np.round(incline, 6),
        np.round(omega, 6),
        np.round(temp, 6),
        spec.route_id,
    )


def _tsp_like_segments() -> list[RouteSegment]:
    # (length_ft, grade_pct, radius_ft); grades and curves eyeballed from a
    # parkway profile, not measured data
    table = [
        (1800, 0.0, None), (900, 2.5, None), (1200, 3.5, 1400), (700, 1.0, None),
        (1500, -2.0, None), (1100, -4.5, -1100), (800, -1.5, None), (2200, 0.5, None),
        (1000, 1.5, 2200), (1300, 4.0, None), (900, 6.0, 900), (600, 2.0, None),
        (2500, 0.0, None), (1200, -3.0, -1800), (1400, -6.0, None), (700, -1.0, 1200),
        (1900, 0.0, None), (1000, 2.0, -2500), (1600, 3.0, None), (800, 0.5, 800),
        (2600, 0.0, None), (1200, -2.5, None), (900, -5.0, 1500), (1100, -1.0, None),
        (1500, 1.0, -1300), (2000, 0.0, None), (1300, 4.5, None), (700, 2.5, -1000),
        (1800, 0.0, None), (1000, -3.5, 2000), (1200, -1.5, None), (2400, 0.0, None),
        (900, 2.0, 1600), (1100, 5.0, None), (1300, 0.5, -900), (1452, 0.0, None),
        (1500, -2.0, -1600), (1200, 3.0, None), (1300, 0.0, 2800), (1248, -1.0, None),
    ]
    return [RouteSegment(length, grade, radius, TSP_LIKE_SPEED_MPH) for length, grade, radius in table]


TSP_LIKE_SPEED_MPH = 35.0
# ramps are modelled as rate zones that saturate at rate_max
TSP_LIKE_RAMPS_FT = (4300.0, 16500.0, 31000.0, 45500.0)
TSP_LIKE_RAMP_EXTENT_FT = 600


def tsp_like(noise: bool = True) -> tuple[RouteSpec, list[Placement]]:
    """Synthetic ten-mile parkway-style route with four on/off ramps."""
    segs = tuple(_tsp_like_segments())
    spec = RouteSpec(segs, 0.2 if noise else 0.0, 0.3 if noise else 0.0, "tsp-like")
    tags = [
        Placement(c, RoadsideTag(100 + i, Command.RateAdjust, 1500, TSP_LIKE_RAMP_EXTENT_FT))
        for i, c in enumerate(TSP_LIKE_RAMPS_FT)
    ]
    return spec, tags


CALIBRATION_EXPECTED_TEMP_F = 28.0


def calibration_route(seed: int = 11) -> RouteSpec:
    """One-mile route of 100 homogeneous 52.8 ft cells for tuning experiments.

    Cells cross ten grades with ten curve radii; each cell also gets a
    pavement temperature 0..6 F below ``CALIBRATION_EXPECTED_TEMP_F``.  The
    temperature term has a fixed, known weight, which pins down the absolute
    scale of k2 and k3 under a rank-based objective.
    """
    grades = (-6.0, -4.5, -3.0, -1.5, -0.5, 0.5, 1.5, 3.0, 4.5, 6.0)
    radii = (None, 4000.0, 2500.0, 1800.0, 1300.0, 1000.0, 800.0, 650.0, 550.0, 450.0)
    temps = tuple(CALIBRATION_EXPECTED_TEMP_F - d for d in range(7))
    rng = np.random.default_rng(seed)
    cells = [(grades[j % 10], radii[j // 10], temps[rng.integers(len(temps))]) for j in range(100)]
    segs = []
    for k, i in enumerate(rng.permutation(100)):
        grade, radius, temp = cells[i]
        if radius is not None and k % 2 == 0:
            radius = -radius
        segs.append(RouteSegment(52.8, grade, radius, 30.0, float(temp)))
    return RouteSpec(tuple(segs), route_id="calibration-1mi")


ROUTE_PRESETS = {
    "tsp-like": lambda: tsp_like()[0],
    "calibration-1mi": calibration_route,
}
