"""Accident binning, rate/accident correlation and grid-search tuning of k2/k3."""

from __future__ import annotations

import datetime as _dt
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .controller import ControllerConfig
from .errors import InputError
from .rfid import Placement
from .simulation import FT_PER_MILE, STEP_FT, RouteFrame, RouteRun, evaluate, prepare
from .telemetry import Trace, format_float

ACCIDENT_HEADER = "chainage_mi,direction,surface,date"
DEFAULT_SEGMENT_MI = 0.1


class Direction(str, Enum):
    NB = "NB"
    SB = "SB"


class Surface(str, Enum):
    dry = "dry"
    wet = "wet"
    slush = "slush"
    snow = "snow"
    ice = "ice"
    other = "other"


WINTER_SURFACES = frozenset({Surface.slush, Surface.snow, Surface.ice})


@dataclass(frozen=True)
class AccidentRecord:
    chainage_mi: float
    direction: Direction
    surface: Surface
    date: _dt.date


def parse_accidents(data: bytes | str, source: str = "<accidents>") -> list[AccidentRecord]:
    """Parse accident CSV.  Extra columns (e.g. time of day) are accepted and ignored."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = [ln.rstrip("\r") for ln in data.split("\n")]
    while lines and not lines[-1]:
        lines.pop()
    if not lines:
        raise InputError(f"{source}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    need = ACCIDENT_HEADER.split(",")
    missing = [c for c in need if c not in header]
    if missing:
        raise InputError(f"{source}: missing required column(s): {', '.join(missing)}")
    ci, di, si, ti = (header.index(c) for c in need)
    out = []
    for lineno, line in enumerate(lines[1:], 2):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != len(header):
            raise InputError(f"{source}: line {lineno}: expected {len(header)} fields, got {len(parts)}")
        try:
            c = float(parts[ci])
            rec = AccidentRecord(c, Direction(parts[di].upper()), Surface(parts[si].lower()),
                                 _dt.date.fromisoformat(parts[ti]))
        except ValueError as exc:
            raise InputError(f"{source}: line {lineno}: {exc}") from None
        if not c >= 0:
            raise InputError(f"{source}: line {lineno}: chainage_mi must be >= 0")
        out.append(rec)
    return out


def emit_accidents(records: Iterable[AccidentRecord]) -> bytes:
    rows = [ACCIDENT_HEADER]
    for r in records:
        rows.append(f"{format_float(r.chainage_mi)},{r.direction.value},{r.surface.value},{r.date.isoformat()}")
    return ("\n".join(rows) + "\n").encode("utf-8")


def winter_filter(records: Iterable[AccidentRecord], include_ice: bool = True) -> list[AccidentRecord]:
    keep = WINTER_SURFACES if include_ice else WINTER_SURFACES - {Surface.ice}
    return [r for r in records if r.surface in keep]


def by_direction(records: Iterable[AccidentRecord], direction: str | None) -> list[AccidentRecord]:
    """Records for one direction; ``None`` or ``"merged"`` keeps everything."""
    if direction is None or direction == "merged":
        return list(records)
    d = Direction(direction)
    return [r for r in records if r.direction is d]


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------


def n_segments(route_len_mi: float, segment_mi: float) -> int:
    if not segment_mi > 0:
        raise InputError("segment length must be > 0")
    return max(1, int(math.floor(route_len_mi / segment_mi + 1e-9)))


def segment_index(chainage_mi, segment_mi: float, n_seg: int) -> np.ndarray:
    """Half-open bins ``[i*L, (i+1)*L)``; the last bin absorbs the remainder."""
    i = np.floor(np.asarray(chainage_mi, dtype=np.float64) / segment_mi + 1e-9).astype(np.int64)
    return np.minimum(i, n_seg - 1)


def bin_accidents(records: Sequence[AccidentRecord], route_len_mi: float,
                  segment_mi: float = DEFAULT_SEGMENT_MI) -> np.ndarray:
    n_seg = n_segments(route_len_mi, segment_mi)
    for i, r in enumerate(records):
        if not 0 <= r.chainage_mi <= route_len_mi:
            raise InputError(
                f"accident record {i} at {r.chainage_mi} mi is outside the route [0, {route_len_mi}]"
            )
    if not records:
        return np.zeros(n_seg, dtype=np.int64)
    idx = segment_index([r.chainage_mi for r in records], segment_mi, n_seg)
    return np.bincount(idx, minlength=n_seg).astype(np.int64)


def segment_mean_rates(run: RouteRun, segment_mi: float = DEFAULT_SEGMENT_MI) -> np.ndarray:
    n_seg = n_segments(run.distance_mi, segment_mi)
    idx = segment_index(run.chainage_ft / FT_PER_MILE, segment_mi, n_seg)
    sums = np.bincount(idx, weights=run.effective_rate, minlength=n_seg)
    counts = np.bincount(idx, minlength=n_seg)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts


@dataclass(frozen=True)
class SegmentStats:
    segment_index: int
    start_mi: float
    accident_count: int
    mean_effective_rate: float


def segment_stats(run: RouteRun, records: Sequence[AccidentRecord],
                  segment_mi: float = DEFAULT_SEGMENT_MI) -> list[SegmentStats]:
    counts = bin_accidents(records, run.distance_mi, segment_mi)
    rates = segment_mean_rates(run, segment_mi)
    return [
        SegmentStats(i, i * segment_mi, int(counts[i]), float(rates[i])) for i in range(counts.shape[0])
    ]


# ---------------------------------------------------------------------------
# correlation
# ---------------------------------------------------------------------------


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties given the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = xs.shape[0]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n]
    groups = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    ranks = np.empty(n)
    ranks[order] = groups
    return ranks


def pearson(x, y) -> Optional[float]:
    """Pearson coefficient, or None when either side has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def spearman(x, y) -> Optional[float]:
    return pearson(average_ranks(x), average_ranks(y))


@dataclass(frozen=True)
class Correlation:
    pearson: Optional[float]
    spearman: Optional[float]
    segments: int


def correlate_series(rates, counts) -> Correlation:
    rates = np.asarray(rates, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if rates.shape != counts.shape:
        raise InputError(f"segmentation mismatch: {rates.shape[0]} rate segments vs {counts.shape[0]} count segments")
    if rates.shape[0] < 3:
        raise InputError(f"need at least 3 segments to correlate, got {rates.shape[0]}")
    keep = np.isfinite(rates)
    return Correlation(pearson(rates[keep], counts[keep]), spearman(rates[keep], counts[keep]),
                       int(keep.sum()))


def correlate(run: RouteRun, counts, segment_mi: float = DEFAULT_SEGMENT_MI) -> Correlation:
    """Correlate per-segment mean effective rate with per-segment accident counts.

    ``counts`` may be an array of counts or a list of SegmentStats.
    """
    if len(counts) and isinstance(counts[0], SegmentStats):
        counts = [s.accident_count for s in counts]
    return correlate_series(segment_mean_rates(run, segment_mi), counts)


# ---------------------------------------------------------------------------
# synthetic accidents
# ---------------------------------------------------------------------------


def synth_accidents(trace: Trace, cfg: ControllerConfig, n_accidents: int, seed: int,
                    direction: str = "NB", dry_fraction: float = 0.0,
                    step_ft: float = STEP_FT, start_date: str = "1998-01-01",
                    years: int = 20) -> list[AccidentRecord]:
    """Draw accidents along the route with intensity proportional to the
    unclamped effective rate under ``cfg`` (all three factors, no zones).

    ``dry_fraction`` adds uniformly placed dry-pavement accidents as clutter.
    """
    frame = prepare(trace, (), step_ft)
    run = evaluate(frame, cfg, check=False)
    speed = frame.speed
    moving = speed > cfg.speed_floor
    intensity = np.where(moving, run.pre_clamp_discharge / np.where(moving, speed, 1.0), 0.0)
    rng = np.random.default_rng(seed)
    n_dry = int(round(n_accidents * dry_fraction))
    n_winter = n_accidents - n_dry
    route_ft = len(frame) * step_ft
    steps = rng.choice(len(frame), size=n_winter, p=intensity / intensity.sum())
    winter_ft = frame.chainage_ft[steps] + rng.uniform(0.0, step_ft, n_winter)
    dry_ft = rng.uniform(0.0, route_ft, n_dry)
    kinds = (Surface.slush, Surface.snow, Surface.ice)
    surfaces = [kinds[i] for i in rng.choice(3, size=n_winter, p=[0.45, 0.45, 0.10])]
    start = _dt.date.fromisoformat(start_date)
    days = rng.integers(0, 365 * years, n_accidents)
    out = []
    for i, (c, s) in enumerate(
        list(zip(winter_ft.tolist(), surfaces)) + [(c, Surface.dry) for c in dry_ft.tolist()]
    ):
        out.append(AccidentRecord(round(c / FT_PER_MILE, 6), Direction(direction), s,
                                  start + _dt.timedelta(days=int(days[i]))))
    out.sort(key=lambda r: (r.chainage_mi, r.date))
    return out


# ---------------------------------------------------------------------------
# tuning
# ---------------------------------------------------------------------------


def _axis(start: float, stop: float, step: float) -> tuple[float, ...]:
    if not step > 0 or stop < start:
        raise InputError(f"bad grid axis {start}:{stop}:{step}")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + i * step, 10) for i in range(n))


@dataclass(frozen=True)
class TuneGrid:
    k2_incline: tuple[float, ...] = _axis(0.0, 0.12, 0.01)
    k2_decline: tuple[float, ...] = _axis(0.0, 0.12, 0.01)
    k3: tuple[float, ...] = _axis(0.0, 5.0, 0.5)

    @classmethod
    def from_ranges(cls, k2_incline=(0.0, 0.12, 0.01), k2_decline=(0.0, 0.12, 0.01),
                    k3=(0.0, 5.0, 0.5)) -> "TuneGrid":
        return cls(_axis(*k2_incline), _axis(*k2_decline), _axis(*k3))

    def points(self) -> list[tuple[float, float, float]]:
        return [(a, b, c) for a in self.k2_incline for b in self.k2_decline for c in self.k3]

    def __len__(self) -> int:
        return len(self.k2_incline) * len(self.k2_decline) * len(self.k3)


@dataclass(frozen=True)
class GridPoint:
    k2_incline: float
    k2_decline: float
    k3: float
    spearman: Optional[float]
    pearson: Optional[float]
    total_salt_lb: float


@dataclass(frozen=True)
class TuneResult:
    best_k2_incline: float
    best_k2_decline: float
    best_k3: float
    correlation: Optional[float]
    pearson: Optional[float]
    total_salt_before: float
    total_salt_after: float
    base_rate_before: float
    base_rate_after: float
    grid_evaluated: int
    surface: tuple[GridPoint, ...] = field(repr=False, default=())

    @property
    def config(self) -> dict:
        return {
            "k2_incline": self.best_k2_incline,
            "k2_decline": self.best_k2_decline,
            "k3": self.best_k3,
            "base_rate_A": self.base_rate_after,
        }

    def to_json(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "surface"}
        d["surface"] = [p.__dict__ for p in self.surface]
        return d


def _evaluate_point(frame: RouteFrame, cfg: ControllerConfig, counts: np.ndarray,
                    segment_mi: float, point) -> GridPoint:
    a, b, c = point
    run = evaluate(frame, cfg.replace(k2_incline=a, k2_decline=b, k3=c), check=False)
    corr = correlate_series(segment_mean_rates(run, segment_mi), counts)
    return GridPoint(a, b, c, corr.spearman, corr.pearson, run.total_salt_lb)


def _rank_key(p: GridPoint):
    # maximise spearman; ties to smaller k2_incline, k2_decline, k3
    s = -math.inf if p.spearman is None else p.spearman
    return (-s, p.k2_incline, p.k2_decline, p.k3)


def rescale_base_rate(frame: RouteFrame, cfg: ControllerConfig, target_total: float,
                      rel_tol: float = 0.005) -> ControllerConfig:
    """Bisect ``base_rate_A`` within [rate_min, rate_max] to hit ``target_total``."""

    def total(a):
        return evaluate(frame, cfg.replace(base_rate_A=a), check=False).total_salt_lb

    lo, hi = cfg.rate_min, cfg.rate_max
    t_lo, t_hi = total(lo), total(hi)
    if not t_lo * (1 - rel_tol) <= target_total <= t_hi * (1 + rel_tol):
        raise InputError(
            f"cannot conserve total salt {target_total:.1f} lb: reachable range with "
            f"A in [{lo}, {hi}] is [{t_lo:.1f}, {t_hi:.1f}] lb"
        )
    if target_total <= t_lo:
        return cfg.replace(base_rate_A=lo)
    if target_total >= t_hi:
        return cfg.replace(base_rate_A=hi)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        t = total(mid)
        if abs(t - target_total) <= 1e-9 * target_total:
            lo = hi = mid
            break
        if t < target_total:
            lo = mid
        else:
            hi = mid
    return cfg.replace(base_rate_A=0.5 * (lo + hi))


def tune_constants(trace: Trace, accidents: Sequence[AccidentRecord], cfg: ControllerConfig,
                   grid: TuneGrid = TuneGrid(), conserve_total: bool = False,
                   segment_mi: float = DEFAULT_SEGMENT_MI, direction: str | None = "NB",
                   placements: Sequence[Placement] = (), step_ft: float = STEP_FT,
                   jobs: int = 1, include_ice: bool = True) -> TuneResult:
    """Grid-search k2_incline, k2_decline and k3 for the best Spearman correlation
    between segment mean rate and winter accident count.

    Each grid point is independent; with ``jobs > 1`` they are evaluated on a
    thread pool and merged in grid order, so the result does not depend on
    ``jobs``.
    """
    points = grid.points()
    if not points:
        raise InputError("tuning grid is empty")
    frame = prepare(trace, placements, step_ft)
    route_len_mi = len(frame) * step_ft / FT_PER_MILE
    records = by_direction(winter_filter(accidents, include_ice), direction)
    counts = bin_accidents(records, route_len_mi, segment_mi)
    before = evaluate(frame, cfg)

    def work(pts):
        return [_evaluate_point(frame, cfg, counts, segment_mi, p) for p in pts]

    if jobs > 1:
        chunk = max(1, math.ceil(len(points) / (4 * jobs)))
        chunks = [points[i:i + chunk] for i in range(0, len(points), chunk)]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            surface = [gp for part in pool.map(work, chunks) for gp in part]
    else:
        surface = work(points)

    best = min(surface, key=_rank_key)
    tuned = cfg.replace(k2_incline=best.k2_incline, k2_decline=best.k2_decline, k3=best.k3)
    if conserve_total:
        tuned = rescale_base_rate(frame, tuned, before.total_salt_lb)
    after = evaluate(frame, tuned)
    return TuneResult(
        best.k2_incline, best.k2_decline, best.k3, best.spearman, best.pearson,
        before.total_salt_lb, after.total_salt_lb, cfg.base_rate_A, tuned.base_rate_A,
        len(surface), tuple(surface),
    )


def tune_report_json(result: TuneResult) -> bytes:
    return (json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n").encode("utf-8")


def segment_stats_csv(stats: Sequence[SegmentStats]) -> bytes:
    buf = io.StringIO()
    buf.write("segment_index,start_mi,accident_count,mean_effective_rate\n")
    for s in stats:
        buf.write(f"{s.segment_index},{format_float(s.start_mi)},{s.accident_count},"
                  f"{format_float(s.mean_effective_rate)}\n")
    return buf.getvalue().encode("utf-8")
