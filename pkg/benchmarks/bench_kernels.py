"""Compare the compiled and numpy particle-grid kernels.

    python3 benchmarks/bench_kernels.py [--n 100000] [--cells 48] [--repeat 5]

Prints best-of-repeat wall time per call and the speed-up, and checks that
both backends produce the same numbers.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from vpconvex import kernels
from vpconvex.field.grid import Grid
from vpconvex.geometry import Ball


def particles(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    X = d * 0.999 * rng.uniform(size=(n, 1)) ** (1 / 3)
    return X, rng.uniform(0.5, 1.5, n)


def best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--cells", type=int, default=48)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    g = Grid(Ball(1.0), cells=args.cells)
    X, w = particles(args.n)
    nodal = np.random.default_rng(1).normal(size=(4, g.size))
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])

    dep = lambda b: kernels.deposit(X, w, g.origin, g.h, g.shape, g.fold_target, backend=b)
    gat = lambda b: kernels.gather(X, g.origin, g.h, g.shape, nodal, backend=b)

    print(f"N = {args.n}, grid {g.shape}, best of {args.repeat}")
    results = {}
    for name, fn in (("deposit", dep), ("gather", gat)):
        for b in backends:
            results[name, b] = best(lambda: fn(b), args.repeat)
            print(f"  {name:8s} {b:7s} {1e3 * results[name, b]:9.2f} ms")
        if "cython" in backends:
            diff = np.max(np.abs(fn("python")[0] - fn("cython")[0]))
            print(f"  {name:8s} speed-up {results[name, 'python'] / results[name, 'cython']:.1f}x, "
                  f"max abs difference {diff:.1e}")
    if "cython" not in backends:
        print("  compiled kernels not available; only the numpy backend was timed")


if __name__ == "__main__":
    main()
