"""Time each hot kernel on its numba and numpy paths.

    python3 benchmarks/bench_kernels.py [--n 400] [--repeat 20]

The numba timings exclude the first (compiling) call. Both paths are run on
identical inputs and their outputs are compared before timing.
"""

import argparse
import time

import numpy as np

from osmilestone import kernels
from osmilestone.stats import unit_gauss_hermite, unit_gauss_legendre


def make_inputs(n, seed=0):
    rng = np.random.default_rng(seed)
    nodes, weights = unit_gauss_legendre(15)
    z_gh, w_gh = unit_gauss_hermite(8)
    y = rng.uniform(0.5, 40.0, n)
    d = (rng.random(n) < 0.6).astype(float)
    logb = rng.normal(-3.0, 0.3, n)
    ha, hb = rng.gamma(2.0, 0.3, n), rng.gamma(2.0, 0.3, n)
    lha, lhb = rng.normal(-3, 0.5, n), rng.normal(-3, 0.5, n)
    da = (rng.random(n) < 0.5).astype(float)
    k = rng.normal(0.0, 0.02, n)
    x = k * y
    c = rng.uniform(1.0, 30.0, n)
    e = rng.exponential(1.0, n)
    m1, m2 = rng.normal(0, 3, n), rng.normal(0, 0.2, n)
    l11, l21, l22 = np.full(n, 2.0), np.full(n, 0.01), np.full(n, 0.1)
    log_a0 = rng.normal(-4.0, 0.2, n)
    return {
        "weibull_logterms": (1.3, logb, y, d),
        "tl_chaz_factor": (1.3, x, nodes, weights),
        "clayton_logterms": (ha, hb, lha, lhb, da, d, 2.0),
        "tl_ppd_solve": (log_a0, 1.3, k, c, e, 600.0, nodes, weights),
        "tl_integrated_os": (1.3, log_a0, 0.02, 0.3, m1, m2, l11, l21, l22, y, d, z_gh, np.log(w_gh),
                             nodes, weights),
    }


def best_time(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def _first(out):
    return out[0] if isinstance(out, tuple) else out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=400, help="subjects per call")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    nb = kernels.numba_backend()
    npb = kernels.numpy_backend
    inputs = make_inputs(args.n)
    print(f"n={args.n} repeat={args.repeat} (best of repeats, milliseconds)")
    print(f"{'kernel':<20}{'numpy':>10}{'numba':>10}{'speedup':>10}{'max|diff|':>12}")
    for name, call_args in inputs.items():
        t_np = best_time(getattr(npb, name), call_args, args.repeat)
        if nb is None:
            print(f"{name:<20}{t_np * 1e3:>10.3f}{'n/a':>10}")
            continue
        fn_nb = getattr(nb, name)
        out_nb = _first(fn_nb(*call_args))  # compile outside the timed loop
        out_np = _first(getattr(npb, name)(*call_args))
        diff = float(np.max(np.abs(np.asarray(out_nb) - np.asarray(out_np))))
        t_nb = best_time(fn_nb, call_args, args.repeat)
        print(f"{name:<20}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
