"""Intra-chunk smoothing by closed-form polynomial least squares.

A noisy action chunk is replaced by one low-degree polynomial per
channel, fitted over normalized waypoint times. The normal equations
are solved directly (LU with partial pivoting); at degree 3 over a
[0, 1] time grid the system is small and well conditioned, and a guard
rejects anything that is not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .trajectory import ActionChunk, PolynomialTrajectory

# Reject normal matrices whose 1-norm condition estimate exceeds this.
CONDITION_LIMIT = 1e10


def build_vandermonde(times: np.ndarray, degree: int) -> np.ndarray:
    """Matrix with entry (k, i) = times[k] ** i; column 0 is all ones."""
    t = np.asarray(times, dtype=np.float64)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("times must be a non-empty 1-D array")
    if t.size > 1 and not (np.diff(t) > 0).all():
        raise ValueError("times must be strictly increasing")
    if degree < 0:
        raise ValueError(f"degree must be non-negative, got {degree}")
    return t[:, None] ** np.arange(degree + 1)[None, :]


@dataclass(frozen=True, eq=False)
class VandermondeSystem:
    """One channel's fitting problem: design matrix plus waypoint column."""

    V: np.ndarray  # (H, d + 1)
    y: np.ndarray  # (H,)

    def __post_init__(self):
        V = np.asarray(self.V, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "y", y)
        if V.ndim != 2 or y.shape != (V.shape[0],):
            raise ValueError(f"incompatible shapes V{V.shape}, y{y.shape}")
        if V.shape[0] < V.shape[1]:
            raise ValueError(
                f"underdetermined fit: {V.shape[0]} waypoints for degree {V.shape[1] - 1}"
            )


def _solve_normal_equations(
    V: np.ndarray, Y: np.ndarray, condition_limit: float = CONDITION_LIMIT
) -> np.ndarray:
    """Minimize ||V c - y||_2 for each column of Y via the normal equations."""
    G = V.T @ V
    cond = float(np.linalg.cond(G, 1))
    if not np.isfinite(cond) or cond > condition_limit:
        raise NumericalError("normal equations too ill-conditioned", cond)
    return np.linalg.solve(G, V.T @ Y)


def solve_least_squares(system: VandermondeSystem) -> np.ndarray:
    """Least-squares coefficients for one channel, lowest order first."""
    return _solve_normal_equations(system.V, system.y)


def smooth_chunk(
    chunk: ActionChunk,
    degree: int = 3,
    smooth_mask: np.ndarray | None = None,
    condition_limit: float = CONDITION_LIMIT,
) -> PolynomialTrajectory:
    """Fit one polynomial per channel over the chunk's sample times.

    Channels where smooth_mask is False keep their raw waypoints as a
    zero-order hold, preserving discrete commands. A chunk shorter than
    degree + 1 rows falls back to the highest degree it can support.
    """
    if not 1 <= degree <= 7:
        raise ValueError(f"degree must be within 1..7, got {degree}")
    h, m = chunk.actions.shape
    if smooth_mask is None:
        smooth_mask = np.ones(m, dtype=bool)
    else:
        smooth_mask = np.asarray(smooth_mask, dtype=bool)
        if smooth_mask.shape != (m,):
            raise ValueError(f"smooth_mask must have shape ({m},), got {smooth_mask.shape}")

    d_eff = min(degree, h - 1)
    tau = np.arange(h) / (h - 1)
    coeffs = np.zeros((m, d_eff + 1))

    smooth_idx = np.flatnonzero(smooth_mask)
    if smooth_idx.size:
        V = build_vandermonde(tau, d_eff)
        try:
            c = _solve_normal_equations(V, chunk.actions[:, smooth_idx], condition_limit)
        except NumericalError as err:
            raise NumericalError(
                f"chunk fit failed for channels {smooth_idx.tolist()}", err.condition
            ) from err
        coeffs[smooth_idx] = c.T

    hold_idx = tuple(int(i) for i in np.flatnonzero(~smooth_mask))
    duration = chunk.duration
    return PolynomialTrajectory(
        coeffs=coeffs,
        time_origin=chunk.obs_time,
        time_scale=duration,
        t_start=chunk.obs_time,
        t_end=chunk.obs_time + duration,
        hold_channels=hold_idx,
        hold_values=chunk.actions[:, list(hold_idx)] if hold_idx else None,
        hold_knots=tau if hold_idx else None,
    )
