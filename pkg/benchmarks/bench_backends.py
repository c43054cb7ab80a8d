#!/usr/bin/env python3
"""Timing comparison of the numba kernels against the pure-numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_backends.py [--n 1600] [--repeats 5]

The same comparison is what UNDERCLUST_BACKEND=numpy switches at runtime.
"""

import argparse
import math
import time

import numpy as np

from underclust import _accel


def time_fn(fn, *args, repeats=5):
    fn(*args)  # warm (JIT compile, caches)
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=1600, help="problem size")
    parser.add_argument("--d", type=int, default=64, help="input dimensionality")
    parser.add_argument("--k", type=int, default=80, help="centroid count")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    x = np.ascontiguousarray(rng.normal(size=(args.n, args.d)))
    y = np.ascontiguousarray(rng.normal(size=(args.n, 2)))
    p = np.abs(rng.normal(size=(args.n, args.n)))
    p = p + p.T
    np.fill_diagonal(p, 0.0)
    p = np.ascontiguousarray(p / p.sum())
    d = _accel._NUMPY_IMPLS["pairwise_sq_dists"](x)

    cases = {
        "pairwise_sq_dists": (x,),
        "conditional_affinities": (d, math.log(30.0), 1e-4 * math.log(2.0), 100),
        "layout_grad_kl": (p, y),
        # kernel-row-shaped inputs (n x n vectors against k centroids)
        "nearest_centroids": (
            np.ascontiguousarray(p),
            np.ascontiguousarray(p[rng.choice(args.n, size=args.k, replace=False)]),
        ),
    }

    print(f"N={args.n}, d={args.d}, k={args.k} (best of {args.repeats})")
    print(f"{'kernel':<26}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, call_args in cases.items():
        t_np = time_fn(_accel._NUMPY_IMPLS[name], *call_args, repeats=args.repeats)
        t_nb = time_fn(_accel._NUMBA_IMPLS[name], *call_args, repeats=args.repeats)
        print(f"{name:<26}{t_np * 1e3:>10.1f}ms{t_nb * 1e3:>10.1f}ms{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
