"""Benchmark the compiled kernels against the pure numpy fallback.

Runs the fit loop and the spectral-radius power iteration on a couple of
problem sizes and prints the per-backend timings with the speedup. The
compiled path is warmed up first so compilation time is not counted.

Usage: python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from nmfsem import Dataset
from nmfsem.estimation import init_basis
from nmfsem import kernels


def make_problem(p1, p2, q, n, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.1, 1.0, (p1, q))
    x = x / x.sum(axis=0)
    theta1 = rng.uniform(0.0, 0.5, (q, p1))
    theta1 *= 0.3 / max(np.abs(np.linalg.eigvals(x @ theta1)).max(), 1e-12)
    theta2 = rng.uniform(0.1, 1.0, (q, p2))
    y2 = rng.uniform(0.0, 1.0, (p2, n))
    y1 = np.linalg.solve(np.eye(p1) - x @ theta1, x @ theta2 @ y2)
    data = Dataset(np.maximum(y1, 0.0), y2)
    x0 = init_basis(data.y1, q, seed=seed)
    t1 = np.full((q, p1), 0.01)
    t2 = rng.uniform(0.5, 1.5, (q, p2))
    return data, x0, t1, t2


def time_call(fn, *args, repeats=3):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_fit_loop(p1, p2, q, n, iters):
    data, x0, t1, t2 = make_problem(p1, p2, q, n)
    tr11, g11, g12, g21, g22 = data.grams()
    args = (tr11, g11, g12, g21, g22)
    penalties = (100.0, 0.01, 0.01, 1e-12)
    rows = {}
    for label, loop in (("numba", kernels.fit_loop),
                        ("numpy", kernels.fit_loop_py)):
        if label == "numba" and not kernels.USING_NUMBA:
            rows[label] = None
            continue
        # Warm-up compiles and fills caches; timed runs restart cold.
        loop(*args, x0.copy(), t1.copy(), t2.copy(), *penalties, 5, 1e-300)
        best, out = time_call(
            lambda: loop(*args, x0.copy(), t1.copy(), t2.copy(),
                         *penalties, iters, 1e-300))
        assert out[4] == iters
        rows[label] = best
    return rows


def bench_power_iteration(size, iters):
    rng = np.random.default_rng(1)
    a = rng.uniform(0.0, 1.0, (size, size))
    a *= 0.9 / np.abs(np.linalg.eigvals(a)).max()
    rows = {}
    for label, kernel in (("numba", kernels.power_iteration),
                          ("numpy", kernels.power_iteration_py)):
        if label == "numba" and not kernels.USING_NUMBA:
            rows[label] = None
            continue
        kernel(a, 1e-12, 50)
        best, out = time_call(lambda: kernel(a, 1e-14, iters))
        rows[label] = best
    return rows


def report(name, rows):
    numba_t, numpy_t = rows.get("numba"), rows["numpy"]
    if numba_t is None:
        print(f"{name:<38} numba: unavailable   numpy: {numpy_t * 1e3:8.2f} ms")
        return
    speedup = numpy_t / numba_t
    print(f"{name:<38} numba: {numba_t * 1e3:8.2f} ms   "
          f"numpy: {numpy_t * 1e3:8.2f} ms   speedup: {speedup:5.1f}x")


def main():
    print(f"active backend: {kernels.BACKEND}")
    report("fit_loop p1=9 p2=3 q=3 n=200 (2000 it)",
           bench_fit_loop(9, 3, 3, 200, 2000))
    report("fit_loop p1=30 p2=10 q=5 n=500 (500 it)",
           bench_fit_loop(30, 10, 5, 500, 500))
    report("power_iteration 200x200 (5000 it)",
           bench_power_iteration(200, 5000))


if __name__ == "__main__":
    main()
