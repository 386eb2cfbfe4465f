"""Compare the compiled and pure-Python sweep kernels.

    python3 benchmarks/bench_kernels.py [--n N] [--nodes M] [--repeat R]

Reports the best-of-R wall time per kernel and backend, the speedup, and the
maximum difference between the two results.  A second section times one
bounded-solution solve end to end with each backend.
"""
import argparse
import time
import warnings

import numpy as np

from tsdyn import kernels
from tsdyn.dichotomy import bounded_solution_ts
from tsdyn.lift import PiecewiseMatrix
from tsdyn.timescale import TimeScale


def best(fn, repeat):
    t = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        t = min(t, time.perf_counter() - t0)
    return t, out


def tables(N, n, m=16, seed=0):
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((m, n, n)) * 0.1 + 0.7 * np.eye(n)
    proj = rng.standard_normal((m, n, n)) * 0.3
    return (phi, rng.integers(0, m, N), proj, rng.integers(0, m, N + 1),
            rng.standard_normal((N, n)), rng.standard_normal(n))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=2)
    ap.add_argument("--nodes", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels._compiled is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    phi, idx, proj, pidx, q, x0 = tables(args.nodes, args.n)
    cases = {
        "affine_forward": lambda b: kernels.affine_forward(phi, idx, q, x0, backend=b),
        "projected_forward": lambda b: kernels.projected_forward(phi, idx, proj, pidx, q, x0, backend=b),
        "projected_backward": lambda b: kernels.projected_backward(phi, idx, proj, pidx, q, x0, backend=b),
        "transition_products": lambda b: kernels.transition_products(phi, idx, np.eye(args.n), backend=b),
    }
    print(f"nodes={args.nodes} n={args.n} repeat={args.repeat}")
    print(f"{'kernel':22s} {'cython [s]':>11s} {'python [s]':>11s} {'speedup':>8s} {'max diff':>9s}")
    for name, fn in cases.items():
        tc, a = best(lambda: fn("cython"), args.repeat)
        tp, b = best(lambda: fn("python"), args.repeat)
        print(f"{name:22s} {tc:11.4f} {tp:11.4f} {tp / tc:8.1f} {np.abs(a - b).max():9.1e}")

    # end-to-end: bounded solution on the pulse scale
    ts = TimeScale.pulse(1.0, 1.0)
    A = PiecewiseMatrix.constant(ts, [[-0.5, 0.3], [0.0, 0.8]])
    f = np.array([1.0, -0.5])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bounded_solution_ts(A, f, 1e-10, 40.0)  # warm the grid cache
        for b in ("cython", "python"):
            kernels.BACKEND = b
            t, sol = best(lambda: bounded_solution_ts(A, f, 1e-10, 40.0), args.repeat)
            print(f"bounded_solution_ts[{b}] {t:.4f} s  residual {sol.residual:.1e}")
        kernels.BACKEND = "cython"


if __name__ == "__main__":
    main()
