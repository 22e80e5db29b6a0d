"""Timing of the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_backends.py --cells 16 24 32 --repeat 3
"""
import argparse
import time

import numpy as np

from nanopat import backend
from nanopat.eikonal import solve_travel_time, trace_many
from nanopat.media import reference_phantom


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, nargs="+", default=[16, 24, 32])
    ap.add_argument("--targets", type=int, default=200, help="geodesics per trace timing")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    impls = ["python"] + (["cython"] if backend.cython_impl is not None else [])
    rng = np.random.default_rng(0)
    print(f"{'cells':>5} {'nodes':>8} {'stage':>6} " + " ".join(f"{i:>10}" for i in impls)
          + ("    speedup" if len(impls) == 2 else ""))
    for n in args.cells:
        ph = reference_phantom("heterogeneous", n_cells=n)
        pts = rng.uniform(0.1, 0.9, (args.targets, 3))
        G = np.stack(np.gradient(np.log(ph.rho), ph.grid.h))
        tt = {i: solve_travel_time(ph, (0.5, 0.5, 0.0), impl=i) for i in impls}
        rows = {
            "fmm": {i: best_of(lambda i=i: solve_travel_time(ph, (0.5, 0.5, 0.0), impl=i),
                               args.repeat) for i in impls},
            "trace": {i: best_of(lambda i=i: trace_many(tt[i], pts, G=G, impl=i), args.repeat)
                      for i in impls},
        }
        for stage, t in rows.items():
            line = f"{n:>5} {int(np.prod(ph.grid.dims)):>8} {stage:>6} " + " ".join(
                f"{t[i]:>9.3f}s" for i in impls)
            if len(impls) == 2:
                line += f" {t['python'] / t['cython']:>9.1f}x"
            print(line)


if __name__ == "__main__":
    main()
