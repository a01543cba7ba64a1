"""Time the compiled and pure-Python walk kernels on the same chain.

Usage: python benchmarks/bench_walk.py [--n 100] [--p 150] [--u 10] [--steps 20000]
"""
import argparse
import time

import numpy as np

from ewinfer._rng import derive_rng
from ewinfer.linalg import GramSystem
from ewinfer.sampler import run_single_chain


def time_backend(system, u, alpha, steps, kernel, repeats):
    best = float("inf")
    res = None
    for _ in range(repeats):
        start = time.perf_counter()
        res = run_single_chain(system, u, alpha, steps // 4, steps - steps // 4,
                               derive_rng(7), kernel=kernel)
        best = min(best, time.perf_counter() - start)
    return best, res


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--p", type=int, default=150)
    ap.add_argument("--u", type=int, default=10)
    ap.add_argument("--steps", type=int, default=20_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    z = rng.standard_normal((args.n, args.p))
    y = z[:, :3] @ np.array([1.0, -1.0, 0.5]) + rng.standard_normal(args.n)
    system = GramSystem.build(z, y)
    alpha = 4.0

    rows = {}
    for kernel in ("cython", "python"):
        try:
            rows[kernel] = time_backend(system, args.u, alpha, args.steps, kernel, args.repeats)
        except ImportError:
            print(f"{kernel}: not available")
    for kernel, (secs, res) in rows.items():
        print(f"{kernel:<8} {secs:8.3f} s  {args.steps / secs / 1e3:10.1f} k steps/s  "
              f"accept={res.accepted / args.steps:.3f}")
    if len(rows) == 2:
        (tc, rc), (tp, rp) = rows["cython"], rows["python"]
        same = np.array_equal(rc.dropped, rp.dropped) and np.array_equal(rc.added, rp.added)
        dev = np.max(np.abs(rc.coef_sum - rp.coef_sum)) / max(np.max(np.abs(rp.coef_sum)), 1.0)
        print(f"speedup {tp / tc:.1f}x; identical move sequence: {same}; "
              f"relative coef-sum difference {dev:.2e}")


if __name__ == "__main__":
    main()
