"""Timing of the bilinear term: compiled triad kernel vs numpy fallback vs FFT.

    python benchmarks/bench_bilinear.py [--N 2 4] [--batch 1 100 1000] [--repeat 5]

Reports the best wall time per call (and per field) for each backend; the
compiled rows are skipped when the extension is not built.
"""

import argparse
import sys
import timeit

import numpy as np

from torus_sns import kernels
from torus_sns.rng import generator
from torus_sns.spectral import bilinear_coeffs, mode_set, random_field


def _time(fn, repeat):
    fn()  # warm-up (plans, triad tables)
    n = 1
    while timeit.timeit(fn, number=n) < 0.05 and n < 1000:
        n *= 2
    return min(timeit.repeat(fn, number=n, repeat=repeat)) / n


def cases(N, batch):
    ms = mode_set(N)
    u = random_field(ms, 1.0, 1.0, generator(0), batch=(batch,)).coeffs
    v = random_field(ms, 1.0, 1.0, generator(1), batch=(batch,)).coeffs
    out = {}
    if kernels.BACKEND == "cython":
        if batch >= kernels.LANES_MIN_BATCH:
            out["cython-lanes"] = lambda: kernels.triad_sum(u, v, ms, "cython")
        saved = kernels.LANES_MIN_BATCH
        def cube():
            kernels.LANES_MIN_BATCH = sys.maxsize
            try:
                return kernels.triad_sum(u, v, ms, "cython")
            finally:
                kernels.LANES_MIN_BATCH = saved
        out["cython-cube"] = cube
    if N <= 4 and batch * len(ms) <= 2e5:
        out["numpy"] = lambda: kernels.triad_sum(u, v, ms, "numpy")
    out["fft"] = lambda: bilinear_coeffs(u, v, ms, "fft")
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, nargs="+", default=[2, 4])
    ap.add_argument("--batch", type=int, nargs="+", default=[1, 100, 1000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"compiled backend: {'yes' if kernels.BACKEND == 'cython' else 'no'}")
    print(f"{'N':>3} {'batch':>6} {'backend':>13} {'ms/call':>10} {'us/field':>10}")
    for N in args.N:
        for b in args.batch:
            for name, fn in cases(N, b).items():
                t = _time(fn, args.repeat)
                print(f"{N:>3} {b:>6} {name:>13} {1e3 * t:>10.3f} {1e6 * t / b:>10.2f}")


if __name__ == "__main__":
    main()
