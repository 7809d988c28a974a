"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--samples 1200000]

The first numba call per kernel compiles (or loads the on-disk cache); it is
reported separately and excluded from the timings.
"""

import argparse
import time

import numpy as np

from saltspread import _kernels as K


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--samples", type=int, default=1_200_000, help="trace samples (10 ms each)")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not K.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(args.seed)
    n = args.samples
    t = np.arange(n, dtype=np.int64) * 10
    x = rng.normal(0.0, 2.0, n)
    speed = rng.uniform(0.0, 60.0, n)
    theta = rng.normal(0.0, 3.0, n)
    omega = rng.normal(0.0, 4.0, n)
    dtemp = rng.normal(0.0, 3.0, n)
    mult = np.ones(n)
    stop = np.zeros(n, dtype=bool)
    blast = np.zeros(n, dtype=bool)
    law = (150.0, 0.05, 0.06, 0.06, 2.5, 150.0, 350.0, 1.0)

    cases = {
        "trailing_mean(500 ms)": (
            lambda: K.trailing_mean_numpy(t, x, 500),
            lambda: K.trailing_mean_numba(t, x, 500),
        ),
        "chainage": (
            lambda: K.chainage_numpy(t, speed),
            lambda: K.chainage_numba(t, speed),
        ),
        "step_rates": (
            lambda: K.step_rates_numpy(speed, theta, omega, dtemp, mult, stop, blast, *law),
            lambda: K.step_rates_numba(speed, theta, omega, dtemp, mult, stop, blast, *law),
        ),
    }

    print(f"n = {n:,} samples, best of {args.repeat}")
    print(f"{'kernel':<24}{'first numba':>13}{'numpy':>11}{'numba':>11}{'speedup':>10}")
    for name, (np_fn, nb_fn) in cases.items():
        t0 = time.perf_counter()
        nb_fn()
        first = time.perf_counter() - t0
        a, b = np_fn(), nb_fn()
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        for u, v in zip(a, b):
            np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-9)
        tn = best_of(np_fn, args.repeat)
        tb = best_of(nb_fn, args.repeat)
        print(f"{name:<24}{first:>12.3f}s{tn * 1e3:>9.1f}ms{tb * 1e3:>9.1f}ms{tn / tb:>9.1f}x")


if __name__ == "__main__":
    main()
