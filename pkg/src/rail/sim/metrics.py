"""Smoothness and discontinuity metrics over run traces.

Standard deviations of position, velocity and acceleration are taken in
non-overlapping 1-second windows; lower means smoother. Velocity and
acceleration come from the trace's analytic columns only when the
command stream is continuous end to end (the fused strategy); raw and
hard-switching traces command position discontinuities, and a joint
cannot teleport, so their derivatives are taken as central finite
differences of the commanded positions, the same accounting a real
encoder stream would yield.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trace import RunTrace


def _shifted_std(block: np.ndarray) -> np.ndarray:
    if block.shape[0] == 0:
        return np.zeros(block.shape[1])
    return (block - block[0]).std(axis=0)


def _use_finite_differences(trace: RunTrace) -> bool:
    strategy = trace.meta.get("strategy")
    if strategy is not None:
        return strategy != "rail"
    # Imported traces: quintic segments mark the continuous strategy.
    return not any(s.startswith("quintic") for s in trace.segments)


@dataclass(eq=False)
class SmoothnessReport:
    window_starts: np.ndarray  # (W,)
    std_pos: np.ndarray  # (W, m)
    std_vel: np.ndarray
    std_acc: np.ndarray
    max_switch_jump: float
    switch_count: int
    derivative_source: str

    @property
    def mean_std_pos(self) -> float:
        return float(self.std_pos.mean())

    @property
    def mean_std_vel(self) -> float:
        return float(self.std_vel.mean())

    @property
    def mean_std_acc(self) -> float:
        return float(self.std_acc.mean())

    def lines(self, label: str = "") -> list[str]:
        head = f"smoothness{f' [{label}]' if label else ''}"
        out = [
            f"{head}: windows={len(self.window_starts)} derivatives={self.derivative_source}",
            f"  mean std  pos={self.mean_std_pos:.6g}  vel={self.mean_std_vel:.6g}  "
            f"acc={self.mean_std_acc:.6g}",
            f"  switches={self.switch_count}  max |jump|={self.max_switch_jump:.6g}",
        ]
        return out


def smoothness_report(trace: RunTrace) -> SmoothnessReport:
    duration = trace.duration
    if duration < 2.0:
        raise ValueError(f"trace spans {duration:.3g}s; smoothness needs at least 2s")
    if _use_finite_differences(trace):
        dt = trace.tick_period
        vel = np.gradient(trace.positions, dt, axis=0)
        acc = np.gradient(vel, dt, axis=0)
        source = "finite-difference"
    else:
        vel = trace.velocities
        acc = trace.accelerations
        source = "analytic"

    t0 = float(trace.times[0])
    n_windows = int(np.floor(duration))
    starts = t0 + np.arange(n_windows, dtype=np.float64)
    m = trace.dim
    std_pos = np.zeros((n_windows, m))
    std_vel = np.zeros((n_windows, m))
    std_acc = np.zeros((n_windows, m))
    rel = trace.times - t0
    for w in range(n_windows):
        mask = (rel >= w) & (rel < w + 1)
        # Shifting by the first sample costs nothing mathematically and
        # keeps the std of constant data at an exact zero.
        std_pos[w] = _shifted_std(trace.positions[mask])
        std_vel[w] = _shifted_std(vel[mask])
        std_acc[w] = _shifted_std(acc[mask])

    switches = discontinuity_report(trace)
    max_jump = max((float(np.abs(s.jump).max()) for s in switches), default=0.0)
    return SmoothnessReport(
        window_starts=starts,
        std_pos=std_pos,
        std_vel=std_vel,
        std_acc=std_acc,
        max_switch_jump=max_jump,
        switch_count=len(switches),
        derivative_source=source,
    )


@dataclass(eq=False)
class SwitchRecord:
    """One chunk switch: when it happened and what position jump it commanded."""

    time: float
    jump: np.ndarray  # (m,)
    estimated: bool  # True when reconstructed from trace columns, not recorded


def discontinuity_report(trace: RunTrace) -> list[SwitchRecord]:
    """Per-switch command jumps, exact when the run recorded them.

    Imported traces carry no jump vectors, so the jump is estimated as
    the gap between the commanded position and the previous tick's
    position extrapolated by its own velocity.
    """
    out: list[SwitchRecord] = []
    for event in trace.events:
        if event.kind != "fuse":
            continue
        i = event.tick
        if event.jump is not None:
            out.append(SwitchRecord(float(trace.times[i]), event.jump, estimated=False))
            continue
        if i == 0:
            continue
        dt = float(trace.times[i] - trace.times[i - 1])
        predicted = trace.positions[i - 1] + trace.velocities[i - 1] * dt
        out.append(
            SwitchRecord(float(trace.times[i]), trace.positions[i] - predicted, estimated=True)
        )
    return out


def settle_time(trace: RunTrace, target: np.ndarray, tol: float) -> float:
    """First time after which every command stays within tol of target.

    Measures when a run finished a reference motion; raises if the trace
    never settles.
    """
    target = np.asarray(target, dtype=np.float64)
    err = np.abs(trace.positions - target).max(axis=1)
    bad = np.flatnonzero(err > tol)
    if bad.size == 0:
        return float(trace.times[0])
    last_bad = int(bad[-1])
    if last_bad + 1 >= len(trace.times):
        raise ValueError(f"trace never settles within {tol:.3g} of the target")
    return float(trace.times[last_bad + 1])
