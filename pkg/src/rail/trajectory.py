"""Time-parameterized trajectory types and their evaluation semantics.

All pieces store polynomial coefficients in a normalized local time
tau = (t - time_origin) / time_scale, which keeps the fitting and
boundary-value algebra well conditioned regardless of absolute clock
values. Derivatives are rescaled back to physical units (1/time_scale
per order) at evaluation, so callers only ever see rad, rad/s, rad/s^2.

Evaluation is pure: identical arguments always return identical bits.
Every type is immutable after construction and safe to share between
concurrent tasks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import TrajectoryDomainError
from .kernels import polyval_batch, polyval_point

# Absolute slack, in normalized local time, when deciding which side of a
# knot a query falls on. Keeps exact waypoint timestamps on their own row
# despite float dust from absolute-time arithmetic.
KNOT_SNAP = 1e-9


def _readonly(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    if out is a:
        out = out.copy()
    out.setflags(write=False)
    return out


def _diff_coeffs(coeffs: np.ndarray, order: int) -> np.ndarray:
    """Coefficients of the order-th derivative in the same tau variable."""
    m, k = coeffs.shape
    if order == 0:
        return coeffs
    if k - order <= 0:
        return np.zeros((m, 1))
    out = coeffs[:, order:].copy()
    for j in range(k - order):
        factor = 1.0
        for i in range(j + 1, j + order + 1):
            factor *= i
        out[:, j] *= factor
    return out


@dataclass(frozen=True, eq=False)
class ActionChunk:
    """A fixed-horizon block of target actions stamped with its observation time.

    Row k is the target for time obs_time + k / sample_rate. Units are
    radians for revolute channels and meters for gripper apertures; the
    trajectory algebra treats all channels uniformly as reals.
    """

    obs_time: float
    actions: np.ndarray
    sample_rate: float

    def __post_init__(self):
        acts = _readonly(np.atleast_2d(self.actions))
        object.__setattr__(self, "actions", acts)
        if acts.ndim != 2 or acts.shape[0] < 2 or acts.shape[1] < 1:
            raise ValueError(f"actions must be H x m with H >= 2, m >= 1, got {acts.shape}")
        if not np.isfinite(acts).all():
            raise ValueError("actions contain non-finite entries")
        if not (self.sample_rate > 0):
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    @property
    def dim(self) -> int:
        return self.actions.shape[1]

    @property
    def duration(self) -> float:
        return (self.horizon - 1) / self.sample_rate

    def sample_times(self) -> np.ndarray:
        return self.obs_time + np.arange(self.horizon) / self.sample_rate

    def trimmed(self, k: int) -> "ActionChunk":
        """Drop the first k rows, advancing obs_time accordingly."""
        if not 0 <= k <= self.horizon - 2:
            raise ValueError(f"cannot trim {k} rows from a {self.horizon}-row chunk")
        if k == 0:
            return self
        return ActionChunk(
            obs_time=self.obs_time + k / self.sample_rate,
            actions=self.actions[k:],
            sample_rate=self.sample_rate,
        )


def _check_domain(t: float, t_start: float, t_end: float) -> None:
    if not (t_start <= t <= t_end):
        raise TrajectoryDomainError(t, t_start, t_end)


def _check_clip(t_start: float, t_end: float, lo: float, hi: float) -> None:
    if not (t_start < t_end):
        raise ValueError(f"empty or inverted clip interval [{t_start:.9g}, {t_end:.9g}]")
    if t_start < lo or t_end > hi:
        raise ValueError(
            f"clip interval [{t_start:.9g}, {t_end:.9g}] not contained in [{lo:.9g}, {hi:.9g}]"
        )


@dataclass(frozen=True, eq=False)
class PolynomialTrajectory:
    """Per-channel polynomial over a time interval, analytically differentiable.

    Channels listed in hold_channels are not polynomial: they replay raw
    waypoints as a zero-order hold (discrete commands such as gripper
    open/close), with velocity and acceleration reported as zero.
    """

    coeffs: np.ndarray  # (m, degree + 1), in normalized tau
    time_origin: float
    time_scale: float
    t_start: float
    t_end: float
    hold_channels: tuple[int, ...] = ()
    hold_values: np.ndarray | None = None  # (n_knots, len(hold_channels))
    hold_knots: np.ndarray | None = None  # normalized tau of each waypoint
    kind: str = "poly"

    def __post_init__(self):
        c = _readonly(np.atleast_2d(self.coeffs))
        object.__setattr__(self, "coeffs", c)
        if not np.isfinite(c).all():
            raise ValueError("coefficients contain non-finite entries")
        if not (self.time_scale > 0):
            raise ValueError(f"time_scale must be positive, got {self.time_scale}")
        if not (self.t_start < self.t_end):
            raise ValueError(f"domain [{self.t_start}, {self.t_end}] is empty or inverted")
        if self.hold_channels:
            if self.hold_values is None or self.hold_knots is None:
                raise ValueError("hold_channels requires hold_values and hold_knots")
            object.__setattr__(self, "hold_values", _readonly(self.hold_values))
            object.__setattr__(self, "hold_knots", _readonly(self.hold_knots))
            if self.hold_values.shape != (self.hold_knots.shape[0], len(self.hold_channels)):
                raise ValueError("hold_values shape does not match hold_knots/hold_channels")
        object.__setattr__(
            self, "_dcoeffs", tuple(_readonly(_diff_coeffs(c, k)) for k in range(3))
        )
        object.__setattr__(self, "_hold_idx", np.asarray(self.hold_channels, dtype=np.intp))

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    @classmethod
    def constant(cls, values: np.ndarray, t_start: float, t_end: float) -> "PolynomialTrajectory":
        """A hold-everything piece commanding fixed values (used to bridge gaps)."""
        v = np.asarray(values, dtype=np.float64).reshape(-1, 1)
        return cls(
            coeffs=v,
            time_origin=t_start,
            time_scale=max(t_end - t_start, 1.0),
            t_start=t_start,
            t_end=t_end,
            kind="hold",
        )

    def _tau(self, t: float) -> float:
        return (t - self.time_origin) / self.time_scale

    def _hold_eval(self, tau: float, order: int) -> np.ndarray:
        if order > 0:
            return np.zeros(len(self.hold_channels))
        idx = int(np.searchsorted(self.hold_knots, tau + KNOT_SNAP, side="right")) - 1
        idx = min(max(idx, 0), self.hold_knots.shape[0] - 1)
        return self.hold_values[idx]

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        _check_domain(t, self.t_start, self.t_end)
        tau = self._tau(t)
        out = polyval_point(self._dcoeffs[order], tau)
        if order:
            out = out * self.time_scale ** (-order)
        if self.hold_channels:
            out[self._hold_idx] = self._hold_eval(tau, order)
        return out

    def evaluate_many(self, ts: np.ndarray, order: int = 0) -> np.ndarray:
        ts = np.asarray(ts, dtype=np.float64)
        for t in (ts.min(initial=self.t_start), ts.max(initial=self.t_start)):
            _check_domain(float(t), self.t_start, self.t_end)
        taus = (ts - self.time_origin) / self.time_scale
        out = polyval_batch(self._dcoeffs[order], taus)
        if order:
            out = out * self.time_scale ** (-order)
        if self.hold_channels:
            for row, tau in enumerate(taus):
                out[row, self._hold_idx] = self._hold_eval(float(tau), order)
        return out

    def clipped(self, t_start: float, t_end: float) -> "PolynomialTrajectory":
        _check_clip(t_start, t_end, self.t_start, self.t_end)
        return PolynomialTrajectory(
            coeffs=self.coeffs,
            time_origin=self.time_origin,
            time_scale=self.time_scale,
            t_start=t_start,
            t_end=t_end,
            hold_channels=self.hold_channels,
            hold_values=self.hold_values,
            hold_knots=self.hold_knots,
            kind=self.kind,
        )

    def shifted(self, dt: float) -> "PolynomialTrajectory":
        """Retime the whole trajectory by dt without touching its shape."""
        return PolynomialTrajectory(
            coeffs=self.coeffs,
            time_origin=self.time_origin + dt,
            time_scale=self.time_scale,
            t_start=self.t_start + dt,
            t_end=self.t_end + dt,
            hold_channels=self.hold_channels,
            hold_values=self.hold_values,
            hold_knots=self.hold_knots,
            kind=self.kind,
        )


@dataclass(frozen=True, eq=False)
class QuinticSegment:
    """One half of a dual-quintic blend, spanning half the blend window.

    Coefficients live in sigma = (t - t_start) / time_scale with
    time_scale equal to the half-window, mapping the domain to [0, 1].
    Channels in hold_channels bypass the blend entirely and replay
    hold_source until the blend window ends.
    """

    coeffs: np.ndarray  # (m, 6)
    t_start: float
    t_end: float
    side: str  # "left" | "right"
    hold_channels: tuple[int, ...] = ()
    hold_source: "Trajectory | None" = None

    def __post_init__(self):
        c = _readonly(np.atleast_2d(self.coeffs))
        object.__setattr__(self, "coeffs", c)
        if c.shape[1] != 6:
            raise ValueError(f"quintic segment needs 6 coefficients per channel, got {c.shape[1]}")
        if not np.isfinite(c).all():
            raise ValueError("coefficients contain non-finite entries")
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        if not (self.t_start < self.t_end):
            raise ValueError(f"domain [{self.t_start}, {self.t_end}] is empty or inverted")
        if self.hold_channels and self.hold_source is None:
            raise ValueError("hold_channels requires hold_source")
        object.__setattr__(self, "time_scale", self.t_end - self.t_start)
        object.__setattr__(self, "time_origin", self.t_start)
        object.__setattr__(
            self, "_dcoeffs", tuple(_readonly(_diff_coeffs(c, k)) for k in range(3))
        )
        object.__setattr__(self, "_hold_idx", np.asarray(self.hold_channels, dtype=np.intp))

    @property
    def dim(self) -> int:
        return self.coeffs.shape[0]

    @property
    def kind(self) -> str:
        return f"quintic_{self.side[0]}"

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        _check_domain(t, self.t_start, self.t_end)
        sigma = (t - self.time_origin) / self.time_scale
        out = polyval_point(self._dcoeffs[order], sigma)
        if order:
            out = out * self.time_scale ** (-order)
        if self.hold_channels:
            out[self._hold_idx] = evaluate_clamped(self.hold_source, t, order)[self._hold_idx]
        return out

    def evaluate_many(self, ts: np.ndarray, order: int = 0) -> np.ndarray:
        return np.stack([self.evaluate(float(t), order) for t in np.asarray(ts)])

    def clipped(self, t_start: float, t_end: float) -> "QuinticSegment":
        _check_clip(t_start, t_end, self.t_start, self.t_end)
        if (t_start, t_end) == (self.t_start, self.t_end):
            return self
        clone = QuinticSegment(
            coeffs=self.coeffs,
            t_start=self.t_start,
            t_end=self.t_end,
            side=self.side,
            hold_channels=self.hold_channels,
            hold_source=self.hold_source,
        )
        object.__setattr__(clone, "t_start", t_start)
        object.__setattr__(clone, "t_end", t_end)
        return clone


@dataclass(frozen=True, eq=False)
class LinearTrajectory:
    """Straight-line interpolation through raw waypoints (the unsmoothed baseline)."""

    knots_rel: np.ndarray  # (H,) seconds from time_origin, strictly increasing
    values: np.ndarray  # (H, m)
    time_origin: float

    def __post_init__(self):
        k = _readonly(self.knots_rel)
        v = _readonly(np.atleast_2d(self.values))
        object.__setattr__(self, "knots_rel", k)
        object.__setattr__(self, "values", v)
        if k.ndim != 1 or k.shape[0] != v.shape[0] or k.shape[0] < 2:
            raise ValueError("need matching knots/values with at least two waypoints")
        if not (np.diff(k) > 0).all():
            raise ValueError("waypoint times must be strictly increasing")
        object.__setattr__(self, "t_start", self.time_origin + float(k[0]))
        object.__setattr__(self, "t_end", self.time_origin + float(k[-1]))

    kind = "linear"

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_chunk(cls, chunk: ActionChunk) -> "LinearTrajectory":
        return cls(
            knots_rel=np.arange(chunk.horizon) / chunk.sample_rate,
            values=chunk.actions,
            time_origin=chunk.obs_time,
        )

    def _segment(self, t: float) -> int:
        u = t - self.time_origin
        idx = int(np.searchsorted(self.knots_rel, u + KNOT_SNAP, side="right")) - 1
        return min(max(idx, 0), self.knots_rel.shape[0] - 2)

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        _check_domain(t, self.t_start, self.t_end)
        if order >= 2:
            return np.zeros(self.dim)
        i = self._segment(t)
        dt = self.knots_rel[i + 1] - self.knots_rel[i]
        slope = (self.values[i + 1] - self.values[i]) / dt
        if order == 1:
            return slope.copy()
        u = (t - self.time_origin) - self.knots_rel[i]
        return self.values[i] + slope * u

    def evaluate_many(self, ts: np.ndarray, order: int = 0) -> np.ndarray:
        return np.stack([self.evaluate(float(t), order) for t in np.asarray(ts)])

    def clipped(self, t_start: float, t_end: float) -> "ClippedPiece":
        _check_clip(t_start, t_end, self.t_start, self.t_end)
        return ClippedPiece(self, t_start, t_end)

    def shifted(self, dt: float) -> "LinearTrajectory":
        return LinearTrajectory(self.knots_rel, self.values, self.time_origin + dt)


@dataclass(frozen=True, eq=False)
class ClippedPiece:
    """Domain restriction of a piece whose own domain must stay intact."""

    base: "Trajectory"
    t_start: float
    t_end: float

    def __post_init__(self):
        if not (self.t_start < self.t_end):
            raise ValueError(f"domain [{self.t_start}, {self.t_end}] is empty or inverted")

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def kind(self) -> str:
        return self.base.kind

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        _check_domain(t, self.t_start, self.t_end)
        return self.base.evaluate(t, order)

    def evaluate_many(self, ts: np.ndarray, order: int = 0) -> np.ndarray:
        return np.stack([self.evaluate(float(t), order) for t in np.asarray(ts)])

    def clipped(self, t_start: float, t_end: float) -> "ClippedPiece":
        _check_clip(t_start, t_end, self.t_start, self.t_end)
        return ClippedPiece(self.base, t_start, t_end)


Piece = Union[PolynomialTrajectory, QuinticSegment, LinearTrajectory, ClippedPiece]


@dataclass(frozen=True, eq=False)
class CompositeTrajectory:
    """Ordered piecewise trajectory covering one contiguous time interval.

    Interior knots follow half-open semantics: a knot time belongs to the
    piece on its right; the final domain endpoint stays evaluable.
    Nested composites are flattened on construction.
    """

    pieces: tuple[Piece, ...]

    def __post_init__(self):
        flat: list[Piece] = []
        for p in self.pieces:
            if isinstance(p, CompositeTrajectory):
                flat.extend(p.pieces)
            else:
                flat.append(p)
        if not flat:
            raise ValueError("composite needs at least one piece")
        for a, b in zip(flat, flat[1:]):
            if a.t_end != b.t_start:
                raise ValueError(
                    f"pieces are not contiguous: segment ends at {a.t_end!r}, "
                    f"next starts at {b.t_start!r}"
                )
        dims = {p.dim for p in flat}
        if len(dims) != 1:
            raise ValueError(f"pieces disagree on channel count: {sorted(dims)}")
        object.__setattr__(self, "pieces", tuple(flat))
        object.__setattr__(self, "_starts", np.array([p.t_start for p in flat]))
        object.__setattr__(self, "t_start", flat[0].t_start)
        object.__setattr__(self, "t_end", flat[-1].t_end)

    @property
    def dim(self) -> int:
        return self.pieces[0].dim

    @property
    def knots(self) -> np.ndarray:
        """Interior knot times (piece boundaries)."""
        return self._starts[1:]

    def piece_at(self, t: float) -> Piece:
        _check_domain(t, self.t_start, self.t_end)
        idx = int(np.searchsorted(self._starts, t, side="right")) - 1
        return self.pieces[min(max(idx, 0), len(self.pieces) - 1)]

    def evaluate(self, t: float, order: int = 0) -> np.ndarray:
        return self.piece_at(t).evaluate(t, order)

    def evaluate_many(self, ts: np.ndarray, order: int = 0) -> np.ndarray:
        return np.stack([self.evaluate(float(t), order) for t in np.asarray(ts)])

    def clipped(self, t_start: float, t_end: float) -> "CompositeTrajectory":
        _check_clip(t_start, t_end, self.t_start, self.t_end)
        kept: list[Piece] = []
        for p in self.pieces:
            lo = max(p.t_start, t_start)
            hi = min(p.t_end, t_end)
            if lo < hi:
                kept.append(p if (lo, hi) == (p.t_start, p.t_end) else p.clipped(lo, hi))
        return CompositeTrajectory(tuple(kept))


Trajectory = Union[Piece, CompositeTrajectory]


def evaluate(traj: Trajectory, t: float, order: int = 0) -> np.ndarray:
    """Position (order 0), velocity (1), or acceleration (2) at time t."""
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    return traj.evaluate(float(t), order)


def evaluate_many(traj: Trajectory, ts: Sequence[float], order: int = 0) -> np.ndarray:
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    return traj.evaluate_many(np.asarray(ts, dtype=np.float64), order)


def evaluate_clamped(traj: Trajectory, t: float, order: int = 0) -> np.ndarray:
    """Evaluate with t clamped into the domain; models hold-at-ends semantics."""
    tc = min(max(float(t), traj.t_start), traj.t_end)
    out = traj.evaluate(tc, order)
    if tc != t and order > 0:
        return np.zeros_like(out)
    return out


def clip_domain(traj: Trajectory, t_start: float, t_end: float) -> Trajectory:
    """Restrict to [t_start, t_end]; evaluation there is bit-identical."""
    return traj.clipped(float(t_start), float(t_end))


def piece_kind(traj: Trajectory, t: float) -> str:
    """Label of the piece active at t (poly, hold, quintic_l, quintic_r, linear)."""
    if isinstance(traj, CompositeTrajectory):
        return traj.piece_at(float(t)).kind
    return traj.kind


def knot_mismatches(traj: CompositeTrajectory) -> np.ndarray:
    """Max |left-limit - right-limit| per derivative order at interior knots.

    Returns a (3,) array of worst-case position/velocity/acceleration
    mismatches, the quantity bounded by the fuser's continuity contract.
    """
    worst = np.zeros(3)
    for prev, nxt in zip(traj.pieces, traj.pieces[1:]):
        t = nxt.t_start
        for order in range(3):
            left = prev.evaluate(prev.t_end, order)
            right = nxt.evaluate(t, order)
            worst[order] = max(worst[order], float(np.abs(left - right).max()))
    return worst
