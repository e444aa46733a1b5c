"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 2000] [--repeat 5]
"""

import argparse
import sys
import timeit

import numpy as np

from fedne import _fallback, kernels

try:
    from fedne import _kernels as compiled
except ImportError:
    compiled = None


def cases(n, rng):
    Z = rng.normal(size=(n, 2))
    X = rng.normal(size=(n, 50))
    a = rng.integers(0, n, 512)
    p = rng.integers(0, n, 512)
    q = rng.integers(0, n, (512, 5))
    nbrs = kernels.knn_indices(X, 7, impl=_fallback)
    return {
        "edge_forces (512 edges, b=5)": lambda impl: kernels.edge_forces(Z, a, p, q, 1 / 512, 1 / 512, 1e-4, impl=impl),
        f"knn_indices (N={n}, D=50, k=7)": lambda impl: kernels.knn_indices(X, 7, impl=impl),
        f"rank_penalty (N={n}, D=50, k=7)": lambda impl: kernels.rank_penalty(X, nbrs, 7, impl=impl),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; only the fallback can be timed", file=sys.stderr)
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, fn in cases(args.n, rng).items():
        number = 200 if name.startswith("edge") else 1
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=number, repeat=args.repeat)) / number
        if compiled is not None:
            t_c = min(timeit.repeat(lambda: fn(compiled), number=number, repeat=args.repeat)) / number
            print(f"{name:36s} {1e3 * t_py:11.3f} {1e3 * t_c:12.3f} {t_py / t_c:7.1f}x")
        else:
            print(f"{name:36s} {1e3 * t_py:11.3f} {'-':>12s} {'-':>8s}")


if __name__ == "__main__":
    main()
