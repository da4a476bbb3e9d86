"""Time the numba kernels against their pure-numpy fallbacks.

The sizes default to what one selection round sees at benchmark scale
(hundreds of candidates, gradient embeddings of a few hundred dims). Numba
variants are warmed up once so JIT compilation does not pollute the numbers.

Usage: python benchmarks/bench_backends.py [--points 800] [--dim 256] [--reps 30]
"""

import argparse
import time

import numpy as np

from mdalbench import kernels
from mdalbench.nncore import RngStream
from mdalbench.strategies import kmeans


def timeit(fn, reps):
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", type=int, default=800)
    parser.add_argument("--dim", type=int, default=256)
    parser.add_argument("--centers", type=int, default=45)
    parser.add_argument("--reps", type=int, default=30)
    args = parser.parse_args()

    gen = np.random.default_rng(0)
    A = gen.normal(size=(args.points, args.dim))
    B = gen.normal(size=(args.centers, args.dim))
    P = gen.random((args.points, 4)) + 1e-9
    P /= P.sum(1, keepdims=True)
    Q = gen.random((args.points, 4)) + 1e-9
    Q /= Q.sum(1, keepdims=True)
    Z = gen.normal(size=(args.points, 4))

    pairs = [
        ("pairwise_sq_dists",
         lambda: kernels.pairwise_sq_dists_numba(A, B),
         lambda: kernels.pairwise_sq_dists_numpy(A, B)),
        ("assign_nearest",
         lambda: kernels.assign_nearest_numba(A, B),
         lambda: kernels.assign_nearest_numpy(A, B)),
        ("sq_dists_to_point",
         lambda: kernels.sq_dists_to_point_numba(A, B[0]),
         lambda: kernels.sq_dists_to_point_numpy(A, B[0])),
        ("softmax_rows",
         lambda: kernels.softmax_rows_numba(Z),
         lambda: kernels.softmax_rows_numpy(Z)),
        ("kl_rows",
         lambda: kernels.kl_rows_numba(P, Q),
         lambda: kernels.kl_rows_numpy(P, Q)),
    ]

    print(f"points={args.points} dim={args.dim} centers={args.centers} "
          f"reps={args.reps} (best-of times)")
    print(f"{'kernel':22s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}")
    for name, numba_fn, numpy_fn in pairs:
        numba_fn()  # warm the JIT before timing
        t_nb = timeit(numba_fn, args.reps)
        t_np = timeit(numpy_fn, args.reps)
        print(f"{name:22s} {t_nb * 1e3:10.3f}ms {t_np * 1e3:10.3f}ms "
              f"{t_np / t_nb:8.2f}x")

    # one composite: the clustering step of a selection round
    sub = A[: min(300, args.points)]
    k = min(15, sub.shape[0])
    kmeans(sub, k, RngStream(0, "bench"))  # warm
    t_km = timeit(lambda: kmeans(sub, k, RngStream(0, "bench")), max(3, args.reps // 10))
    print(f"{'kmeans (active path)':22s} {t_km * 1e3:10.3f}ms")


if __name__ == "__main__":
    main()
