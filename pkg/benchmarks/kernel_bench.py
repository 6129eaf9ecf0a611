"""Benchmark the numba-jitted polynomial kernels against the numpy fallback.

Run:  python benchmarks/kernel_bench.py
The same comparison can be forced at package level with RAIL_NUMBA=0.
"""

import time

import numpy as np

from rail import kernels


def bench(fn, *args, repeats=7, inner=200):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def main():
    rng = np.random.default_rng(0)
    cases = [
        ("cubic fit,   m=16", rng.normal(size=(16, 4))),
        ("quintic blend, m=16", rng.normal(size=(16, 6))),
        ("cubic fit,   m=32", rng.normal(size=(32, 4))),
    ]
    tau = 0.37
    taus = rng.uniform(0, 1, size=100_000)

    if not kernels.NUMBA_ENABLED:
        print("numba disabled or unavailable; only the numpy path is measured\n")

    header = f"{'kernel':<34}{'numpy':>12}{'numba':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, coeffs in cases:
        t_np = bench(kernels.polyval_point_numpy, coeffs, tau)
        row = f"point  {label:<27}{t_np * 1e6:>10.2f}us"
        if kernels.NUMBA_ENABLED:
            t_nb = bench(kernels.polyval_point_numba, coeffs, tau)
            row += f"{t_nb * 1e6:>10.2f}us{t_np / t_nb:>9.1f}x"
        print(row)

        t_np = bench(kernels.polyval_batch_numpy, coeffs, taus, inner=5)
        row = f"batch  {label} x1e5{'':<18}"[:41] + f"{t_np * 1e3:>9.2f}ms"
        if kernels.NUMBA_ENABLED:
            t_nb = bench(kernels.polyval_batch_numba, coeffs, taus, inner=5)
            row += f"{t_nb * 1e3:>10.2f}ms{t_np / t_nb:>9.1f}x"
        print(row)


if __name__ == "__main__":
    kernels.warmup()
    main()
