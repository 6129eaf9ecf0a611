"""Seamless fusion of an executing trajectory with a newly arrived chunk.

Four pieces cooperate here: a latency-compensated stale index that drops
actions already in the past, a grid search for the alignment offset that
best continues the current motion, a dual-quintic blend whose two halves
meet at a zero-acceleration midpoint (pinning position, velocity and
acceleration at both ends avoids the overshoot a single quintic suffers),
and the composite assembly that stitches old trajectory, blend halves and
time-shifted new trajectory into one piecewise curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ChunkTooShortError, ClockSkewError, NumericalError
from .trajectory import (
    CompositeTrajectory,
    PolynomialTrajectory,
    QuinticSegment,
    Trajectory,
    evaluate,
    evaluate_many,
)

# Boundary-condition rows for a quintic in normalized sigma over [0, 1]:
# value, first and second derivative at sigma = 0, then the same at sigma = 1.
_QUINTIC_SYSTEM = np.array(
    [
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 2.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        [0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        [0.0, 0.0, 2.0, 6.0, 12.0, 20.0],
    ]
)
_QUINTIC_COND = float(np.linalg.cond(_QUINTIC_SYSTEM, 1))
_CONDITION_LIMIT = 1e10


@dataclass(frozen=True, eq=False)
class BoundaryState:
    """Position, velocity and acceleration of every channel at one instant."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def __post_init__(self):
        for name in ("position", "velocity", "acceleration"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if not np.isfinite(v).all():
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, v)
        if not (self.position.shape == self.velocity.shape == self.acceleration.shape):
            raise ValueError("boundary vectors disagree on channel count")


@dataclass(frozen=True)
class BlendSpec:
    """Timing of one fusion: switch time, alignment offset, blend and search windows."""

    t_s: float
    t_a: float
    t_q: float
    t_w: float

    def __post_init__(self):
        if not (self.t_q > 0):
            raise ValueError(f"blend window t_q must be positive, got {self.t_q}")
        if not (self.t_w > 0):
            raise ValueError(f"search window t_w must be positive, got {self.t_w}")
        if not (0 <= self.t_a < self.t_w):
            raise ValueError(f"alignment offset t_a={self.t_a} outside [0, t_w={self.t_w})")


def stale_index(t_now: float, t_obs: float, f_ctrl: float) -> int:
    """Count of leading chunk actions already overtaken by elapsed time."""
    if t_now < t_obs:
        raise ClockSkewError(
            f"observation stamped {t_obs - t_now:.6g}s in the future; "
            "client and server clocks disagree"
        )
    # The epsilon keeps an exact multiple of the period from flooring one
    # index low after float rounding; it is far below any real latency.
    return int(math.floor((t_now - t_obs) * f_ctrl + 1e-9))


def align_offset(
    current: Trajectory,
    incoming: Trajectory,
    t_s: float,
    t_w: float,
    grid_step: float,
) -> float:
    """Offset into the incoming trajectory from which execution should resume.

    Maximizes, over grid points t_a in (0, t_w), the number of channels
    whose displacement from the current position agrees in sign with the
    current velocity (sign(0) counts as positive). The objective is
    integer-valued and piecewise constant, so an exhaustive grid search
    is the whole optimizer; ties break toward the smallest offset to
    discard as little of the new chunk as possible.
    """
    if not (grid_step > 0):
        raise ValueError(f"grid_step must be positive, got {grid_step}")
    if t_w <= 2 * grid_step:
        raise ValueError(
            f"search window t_w={t_w:.9g} leaves no grid points at step {grid_step:.9g}"
        )
    n = int(math.floor((t_w - grid_step) / grid_step + 1e-9))
    offsets = grid_step * np.arange(1, n + 1)

    pos = evaluate(current, t_s, 0)
    vel = evaluate(current, t_s, 1)
    candidates = evaluate_many(incoming, incoming.t_start + offsets, 0)
    objective = np.where((candidates - pos) * vel >= 0, 1, -1).sum(axis=1)
    return float(offsets[int(np.argmax(objective))])


def boundary_state(traj: Trajectory, t: float) -> BoundaryState:
    """Analytic order-0/1/2 evaluation bundled for blend construction."""
    return BoundaryState(
        position=evaluate(traj, t, 0),
        velocity=evaluate(traj, t, 1),
        acceleration=evaluate(traj, t, 2),
    )


def _half_rhs(h: float, p0, v0, a0, p1, v1, a1) -> np.ndarray:
    return np.stack([p0, h * v0, h * h * a0, p1, h * v1, h * h * a1])


def solve_quintic_pair(
    start: BoundaryState,
    end: BoundaryState,
    t_q: float,
    t_start: float = 0.0,
    hold_channels: tuple[int, ...] = (),
    hold_source: Trajectory | None = None,
) -> tuple[QuinticSegment, QuinticSegment]:
    """Two adjacent quintic halves joining start to end over a window t_q.

    The halves meet at the midpoint with averaged position and velocity
    and zero acceleration from both sides; each half is the unique
    solution of a 6x6 boundary-value system solved in normalized time.
    """
    if not (t_q > 0):
        raise ValueError(f"blend window t_q must be positive, got {t_q}")
    if start.position.shape != end.position.shape:
        raise ValueError("start and end boundary states disagree on channel count")

    t_mid = t_start + t_q / 2
    t_end = t_start + t_q
    h_l = t_mid - t_start
    h_r = t_end - t_mid
    scaled_cond = _QUINTIC_COND * max(1.0, 1.0 / min(h_l, h_r)) ** 2
    if scaled_cond > _CONDITION_LIMIT:
        raise NumericalError(f"blend window t_q={t_q:.3e} too small to solve", scaled_cond)

    mid_pos = 0.5 * (start.position + end.position)
    mid_vel = 0.5 * (start.velocity + end.velocity)
    zero = np.zeros_like(mid_pos)

    rhs_left = _half_rhs(h_l, start.position, start.velocity, start.acceleration,
                         mid_pos, mid_vel, zero)
    rhs_right = _half_rhs(h_r, mid_pos, mid_vel, zero,
                          end.position, end.velocity, end.acceleration)
    coeffs = np.linalg.solve(_QUINTIC_SYSTEM, np.concatenate([rhs_left, rhs_right], axis=1))
    m = mid_pos.shape[0]

    left = QuinticSegment(
        coeffs=coeffs[:, :m].T, t_start=t_start, t_end=t_mid, side="left",
        hold_channels=hold_channels, hold_source=hold_source,
    )
    right = QuinticSegment(
        coeffs=coeffs[:, m:].T, t_start=t_mid, t_end=t_end, side="right",
        hold_channels=hold_channels, hold_source=hold_source,
    )
    return left, right


def discontinuity(
    current: Trajectory, incoming: Trajectory, t_s: float, t_a: float
) -> np.ndarray:
    """Per-channel position jump a hard switch at t_s to offset t_a would command."""
    return evaluate(current, t_s, 0) - evaluate(incoming, incoming.t_start + t_a, 0)


def fuse(
    current: Trajectory, incoming: PolynomialTrajectory, spec: BlendSpec
) -> CompositeTrajectory:
    """Composite of current trajectory, dual-quintic blend and shifted new trajectory.

    The result follows current strictly before t_s, the blend halves on
    [t_s, t_s + t_q), and the incoming trajectory afterwards, retimed so
    its local offset t_a + t_q lands exactly on t_s + t_q. Discrete
    (hold) channels skip the blend: they replay current until the blend
    window ends and switch there.
    """
    if current.dim != incoming.dim:
        raise ValueError(f"channel mismatch: current has {current.dim}, incoming {incoming.dim}")

    u_end = spec.t_a + spec.t_q
    duration = incoming.t_end - incoming.t_start
    if duration < u_end:
        raise ChunkTooShortError(
            f"incoming trajectory spans {duration:.6g}s, below alignment+blend {u_end:.6g}s"
        )

    start = boundary_state(current, spec.t_s)
    end = boundary_state(incoming, incoming.t_start + u_end)
    hold = getattr(incoming, "hold_channels", ())
    left, right = solve_quintic_pair(
        start, end, spec.t_q, t_start=spec.t_s,
        hold_channels=hold, hold_source=current if hold else None,
    )
    blend_end = right.t_end

    pieces: list = []
    if spec.t_s > current.t_start:
        head = current.clipped(current.t_start, spec.t_s)
        pieces.extend(head.pieces if isinstance(head, CompositeTrajectory) else [head])
    pieces.extend([left, right])

    tail = incoming.shifted(blend_end - (incoming.t_start + u_end))
    if tail.t_end > blend_end:
        pieces.append(tail.clipped(blend_end, tail.t_end))
    return CompositeTrajectory(tuple(pieces))
