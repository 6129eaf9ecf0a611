"""Hot polynomial-evaluation kernels.

Horner evaluation of per-channel coefficient matrices is the innermost
operation of every control tick, so it is compiled with numba when
available. Set ``RAIL_NUMBA=0`` to force the pure-numpy path (the two
are compared in ``benchmarks/kernel_bench.py``).
"""

from __future__ import annotations

import os

import numpy as np


def polyval_point_numpy(coeffs: np.ndarray, tau: float) -> np.ndarray:
    """Evaluate m polynomials with coefficient rows ``coeffs[i, :]`` at scalar tau."""
    k = coeffs.shape[1]
    out = coeffs[:, k - 1].copy()
    for j in range(k - 2, -1, -1):
        out *= tau
        out += coeffs[:, j]
    return out


def polyval_batch_numpy(coeffs: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """Evaluate m polynomials at n points; returns an (n, m) array."""
    k = coeffs.shape[1]
    powers = taus[:, None] ** np.arange(k)[None, :]
    return powers @ coeffs.T


def _polyval_point_loop(coeffs, tau):
    m, k = coeffs.shape
    out = np.empty(m)
    for i in range(m):
        acc = coeffs[i, k - 1]
        for j in range(k - 2, -1, -1):
            acc = acc * tau + coeffs[i, j]
        out[i] = acc
    return out


def _polyval_batch_loop(coeffs, taus):
    m, k = coeffs.shape
    n = taus.shape[0]
    out = np.empty((n, m))
    for p in range(n):
        tau = taus[p]
        for i in range(m):
            acc = coeffs[i, k - 1]
            for j in range(k - 2, -1, -1):
                acc = acc * tau + coeffs[i, j]
            out[p, i] = acc
    return out


_flag = os.environ.get("RAIL_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _flag not in ("0", "false", "off", "no")

polyval_point_numba = None
polyval_batch_numba = None

if NUMBA_REQUESTED:
    try:
        from numba import njit

        polyval_point_numba = njit(cache=True)(_polyval_point_loop)
        polyval_batch_numba = njit(cache=True)(_polyval_batch_loop)
    except ImportError:
        pass

NUMBA_ENABLED = polyval_point_numba is not None

# Only the scalar kernel is bound to numba: it is the per-tick hot path and
# gains 5-9x, while the batch shape is already BLAS-bound in numpy (see
# benchmarks/kernel_bench.py, where both variants are measured).
if NUMBA_ENABLED:
    polyval_point = polyval_point_numba
else:
    polyval_point = polyval_point_numpy
polyval_batch = polyval_batch_numpy


def warmup() -> None:
    """Trigger JIT compilation so the first control tick pays no compile cost."""
    c = np.zeros((1, 2))
    polyval_point(c, 0.0)
    polyval_batch(c, np.zeros(1))
    if polyval_batch_numba is not None:
        polyval_batch_numba(c, np.zeros(1))
