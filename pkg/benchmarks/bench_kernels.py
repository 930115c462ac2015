"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Both backends run the same inputs; the script checks that outputs agree and
prints the best wall time of each and the speed-up.
"""
import argparse
import math
import time
from contextlib import contextmanager

import numpy as np

from polycone import kernels, pathsum
from polycone.environment import Environment, PotentialSpec
from polycone.pathsum import ModelParams, enumerate_table, free_first_passage, slab_green


@contextmanager
def using(mod):
    """Route the library's kernel calls through `mod` for the duration."""
    saved = pathsum.kernels
    pathsum.kernels = mod
    try:
        yield
    finally:
        pathsum.kernels = saved


def enumeration_case(mod):
    params = ModelParams(1, 2.5, 1.0)
    env = Environment(PotentialSpec("two_point", v=1.0, rho=0.3), 7)
    with using(mod):
        t = enumerate_table("T", params, 6, 5, env=env)
    return t.data, np.array([t.nodes])


def sweep_case(mod):
    params = ModelParams(2, 2.5, 1.0)
    env = Environment(PotentialSpec("two_point", v=1.0, rho=0.3), 7)
    F = free_first_passage(2, 2.5)
    with using(mod):
        g = slab_green(env, params, 8, 1e-10 * F ** 8)
    return np.array([g.value]), np.array([g.error_bound])


def sync_case(mod):
    rng = np.random.default_rng(1)
    rows, steps = 2000, 60
    hx = np.cumsum(rng.integers(1, 4, size=(rows, steps)), axis=1).astype(np.int64)
    hy = np.cumsum(rng.integers(1, 4, size=(rows, steps)), axis=1).astype(np.int64)
    n = np.full(rows, steps, dtype=np.int64)
    ix = np.full((rows, steps), -1, dtype=np.int64)
    iy = np.full((rows, steps), -1, dtype=np.int64)
    c = np.zeros(rows, dtype=np.int64)
    mod.sync_pairs(hx, hy, n, n, ix, iy, c)
    return ix, c


def best_of(fn, mod, repeat):
    best = math.inf
    result = None
    for _ in range(repeat):
        t = time.perf_counter()
        result = fn(mod)
        best = min(best, time.perf_counter() - t)
    return best, result


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    fast = kernels.backend("cython")
    slow = kernels.backend("python")
    print(f"{'kernel':<12}{'cython s':>12}{'python s':>12}{'speed-up':>10}  agree")
    for name, fn in (("enumerate", enumeration_case), ("dp_sweep", sweep_case), ("sync_pairs", sync_case)):
        tf, rf = best_of(fn, fast, args.repeat)
        ts, rs = best_of(fn, slow, 1)
        agree = all(np.allclose(a, b, rtol=1e-12, atol=0) for a, b in zip(rf, rs))
        print(f"{name:<12}{tf:>12.4f}{ts:>12.4f}{ts / tf:>10.1f}  {agree}")


if __name__ == "__main__":
    main()
