"""Time the numba and numpy stepping backends and check they agree.

    python3 benchmarks/bench_backends.py --n 201 401 --steps 500

The first call of each numba kernel compiles; that is reported separately
and excluded from the per-step timing.
"""
import argparse
import time

import numpy as np

from kdv_backstepping._accel import HAVE_NUMBA
from kdv_backstepping.dynamics import Stepper
from kdv_backstepping.grid import Grid


def march(stepper, u, steps, nonlinear):
    for _ in range(steps):
        u, _, _ = stepper.advance(u, 0.0, nonlinear=nonlinear)
    return u


def bench(n, steps, nonlinear, backend, repeats=3):
    u0 = Grid(n).sample(lambda x: 2 * x**2 * (1 - x) ** 2).values
    t0 = time.perf_counter()
    st = Stepper(n, 1e-3, 0.5, backend=backend)
    march(st, u0, 1, nonlinear)
    warm = time.perf_counter() - t0
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        u = march(st, u0, steps, nonlinear)
        best = min(best, time.perf_counter() - t0)
    return u, warm, best / steps


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[101, 201, 401])
    ap.add_argument("--steps", type=int, default=500)
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    if not HAVE_NUMBA:
        print("numba not installed: timing the numpy backend only")
    print(f"{'n':>5} {'nonlinear':>9} {'backend':>7} {'setup s':>9} {'us/step':>9} {'speedup':>8} {'max diff':>9}")
    for n in args.n:
        for nonlinear in (False, True):
            rows = {b: bench(n, args.steps, nonlinear, b) for b in backends}
            ref_u, _, ref_t = rows["numpy"]
            for b, (u, warm, per) in rows.items():
                diff = float(np.abs(u - ref_u).max())
                print(f"{n:5d} {str(nonlinear):>9} {b:>7} {warm:9.3f} {1e6 * per:9.1f} "
                      f"{ref_t / per:8.2f} {diff:9.1e}")


if __name__ == "__main__":
    main()
