"""Hot numeric kernels.

Each kernel has two implementations with identical semantics: a numba
``@njit`` loop and a vectorised numpy version.  The numba path is used when
numba imports cleanly and ``SALTSPREAD_NUMBA`` is not set to ``0``.

Both paths perform the same floating point operations in the same order, so
they agree to the last bit on IEEE hardware (no fastmath).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("SALTSPREAD_NUMBA", "1") != "0"

MPH_TO_FPS = 5280.0 / 3600.0


# ---------------------------------------------------------------------------
# trailing moving average
# ---------------------------------------------------------------------------


def trailing_mean_numpy(t_ms, x, window_ms):
    """Causal mean of ``x`` over samples with ``t[i] - window_ms < t[j] <= t[i]``.

    The mean is accumulated as deviations from the current sample so a
    constant signal maps to itself exactly, and the result is clipped to the
    window's range to absorb rounding.
    """
    t_ms = np.asarray(t_ms, dtype=np.int64)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        return x.copy()
    first = np.searchsorted(t_ms, t_ms - window_ms, side="right")
    idx = np.arange(n)
    count = idx - first + 1
    max_lag = int(count.max())

    acc = np.zeros(n)
    lo = x.copy()
    hi = x.copy()
    for lag in range(1, max_lag):
        j = idx - lag
        live = lag < count
        jj = np.where(live, j, idx)
        xj = x[jj]
        acc = np.where(live, acc + (xj - x), acc)
        lo = np.where(live, np.minimum(lo, xj), lo)
        hi = np.where(live, np.maximum(hi, xj), hi)
    out = x + acc / count
    return np.minimum(np.maximum(out, lo), hi)


@njit(cache=True, nogil=True)
def _trailing_mean_loop(t_ms, x, window_ms):
    n = x.shape[0]
    out = np.empty(n)
    first = 0
    for i in range(n):
        while t_ms[first] <= t_ms[i] - window_ms:
            first += 1
        xi = x[i]
        acc = 0.0
        lo = xi
        hi = xi
        for j in range(i - 1, first - 1, -1):
            xj = x[j]
            acc = acc + (xj - xi)
            if xj < lo:
                lo = xj
            if xj > hi:
                hi = xj
        v = xi + acc / (i - first + 1)
        if v < lo:
            v = lo
        if v > hi:
            v = hi
        out[i] = v
    return out


def trailing_mean_numba(t_ms, x, window_ms):
    return _trailing_mean_loop(
        np.ascontiguousarray(t_ms, dtype=np.int64),
        np.ascontiguousarray(x, dtype=np.float64),
        np.int64(window_ms),
    )


# ---------------------------------------------------------------------------
# chainage integration (trapezoidal, feet)
# ---------------------------------------------------------------------------


def chainage_numpy(t_ms, speed_mph):
    t_ms = np.asarray(t_ms, dtype=np.int64)
    v = np.asarray(speed_mph, dtype=np.float64) * MPH_TO_FPS
    out = np.zeros(v.shape[0])
    if v.shape[0] > 1:
        dt = np.diff(t_ms) / 1000.0
        inc = (v[:-1] + v[1:]) * 0.5 * dt
        out[1:] = np.cumsum(inc)
    return out


@njit(cache=True, nogil=True)
def _chainage_loop(t_ms, speed_mph, scale):
    n = speed_mph.shape[0]
    out = np.zeros(n)
    acc = 0.0
    for i in range(1, n):
        dt = (t_ms[i] - t_ms[i - 1]) / 1000.0
        acc = acc + (speed_mph[i - 1] * scale + speed_mph[i] * scale) * 0.5 * dt
        out[i] = acc
    return out


def chainage_numba(t_ms, speed_mph):
    return _chainage_loop(
        np.ascontiguousarray(t_ms, dtype=np.int64),
        np.ascontiguousarray(speed_mph, dtype=np.float64),
        MPH_TO_FPS,
    )


# ---------------------------------------------------------------------------
# per-step rate law
# ---------------------------------------------------------------------------
#
# Inputs are per-step arrays; constants are scalars.  Outputs:
#   rate        effective application rate, lb/lane-mile (0 when off)
#   pre         pre-clamp discharge, lb/hour, before zone multiplier
#   speed_term  s + k3*|omega|
#   temp_f      max(0, 1 + k1*dT)
#   geom_f      1 + k2*|theta| (k2 chosen by sign of theta)


def step_rates_numpy(speed, theta, omega, dtemp, zone_mult, stop, blast,
                     base, k1, k2_up, k2_down, k3, rate_min, rate_max, floor):
    speed = np.asarray(speed, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    zone_mult = np.asarray(zone_mult, dtype=np.float64)
    stop = np.asarray(stop, dtype=bool)
    blast = np.asarray(blast, dtype=bool)
    speed_term = speed + k3 * np.abs(omega)
    temp_f = np.maximum(1.0 + k1 * np.asarray(dtemp, dtype=np.float64), 0.0)
    k2 = np.where(theta >= 0.0, k2_up, k2_down)
    geom_f = 1.0 + k2 * np.abs(theta)
    moving = speed > floor
    pre = np.where(moving, speed_term * base * temp_f * geom_f, 0.0)
    safe_speed = np.where(moving, speed, 1.0)
    raw = pre / safe_speed * zone_mult
    rate = np.minimum(np.maximum(raw, rate_min), rate_max)
    rate = np.where(blast, rate_max, rate)
    off = (~moving) | stop | (zone_mult == 0.0)
    rate = np.where(off, 0.0, rate)
    return rate, pre, speed_term, temp_f, geom_f


@njit(cache=True, nogil=True)
def _step_rates_loop(speed, theta, omega, dtemp, zone_mult, stop, blast,
                     base, k1, k2_up, k2_down, k3, rate_min, rate_max, floor):
    n = speed.shape[0]
    rate = np.empty(n)
    pre = np.empty(n)
    speed_term = np.empty(n)
    temp_f = np.empty(n)
    geom_f = np.empty(n)
    for i in range(n):
        s = speed[i]
        st = s + k3 * abs(omega[i])
        tf = 1.0 + k1 * dtemp[i]
        if tf < 0.0:
            tf = 0.0
        th = theta[i]
        k2 = k2_up if th >= 0.0 else k2_down
        gf = 1.0 + k2 * abs(th)
        speed_term[i] = st
        temp_f[i] = tf
        geom_f[i] = gf
        if s > floor:
            p = st * base * tf * gf
            pre[i] = p
            r = p / s * zone_mult[i]
            if r < rate_min:
                r = rate_min
            if r > rate_max:
                r = rate_max
            if blast[i]:
                r = rate_max
            if stop[i] or zone_mult[i] == 0.0:
                r = 0.0
            rate[i] = r
        else:
            pre[i] = 0.0
            rate[i] = 0.0
    return rate, pre, speed_term, temp_f, geom_f


def step_rates_numba(speed, theta, omega, dtemp, zone_mult, stop, blast,
                     base, k1, k2_up, k2_down, k3, rate_min, rate_max, floor):
    f = np.ascontiguousarray
    return _step_rates_loop(
        f(speed, dtype=np.float64), f(theta, dtype=np.float64),
        f(omega, dtype=np.float64), f(dtemp, dtype=np.float64),
        f(zone_mult, dtype=np.float64), f(stop, dtype=np.bool_),
        f(blast, dtype=np.bool_),
        float(base), float(k1), float(k2_up), float(k2_down), float(k3),
        float(rate_min), float(rate_max), float(floor),
    )


if USE_NUMBA:
    trailing_mean = trailing_mean_numba
    chainage = chainage_numba
    step_rates = step_rates_numba
else:
    trailing_mean = trailing_mean_numpy
    chainage = chainage_numpy
    step_rates = step_rates_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
