"""Client-side executive: three cooperating tasks around one shared trajectory.

The hand task ticks at f_ctrl and must never wait on anything: it reads
the active trajectory through an atomically swapped cell, integrates any
newly delivered chunk inline (a sub-millisecond operation), and degrades
to holding the last command on any fault. The eye task samples robot
state; the brain task keeps at most one inference request in flight.
In simulation all three are interleaved deterministically on a virtual
clock; live mode runs them as real threads over a socket client.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChunkTooShortError,
    ClockSkewError,
    DisconnectedError,
    NumericalError,
    RailError,
    RequestTimeoutError,
)
from .fusion import BlendSpec, align_offset, discontinuity, fuse, stale_index
from .smoothing import smooth_chunk
from .trajectory import (
    ActionChunk,
    CompositeTrajectory,
    LinearTrajectory,
    PolynomialTrajectory,
    Trajectory,
    evaluate,
    piece_kind,
)

logger = logging.getLogger(__name__)

STRATEGIES = ("raw", "naive", "rail")


@dataclass(frozen=True)
class LinkerConfig:
    """Frequencies, windows and thresholds the pipeline leaves configurable."""

    f_ctrl: float = 100.0
    f_interp: float = 100.0
    f_obs: float = 30.0
    f_infer: float = 2.0
    degree: int = 3
    t_q: float = 0.2
    t_w: float | None = None  # None: half a chunk, horizon / (2 * sample_rate)
    grid_step: float | None = None  # None: one interpolation period
    discrete_channels: tuple[int, ...] = ()
    condition_limit: float = 1e10
    min_fit_rows: int = 2

    def __post_init__(self):
        if not (self.f_ctrl >= self.f_interp > 0):
            raise ValueError(f"need f_ctrl >= f_interp > 0, got {self.f_ctrl}, {self.f_interp}")
        if not (self.f_obs > 0 and self.f_infer > 0):
            raise ValueError("observation and inference frequencies must be positive")
        if not 1 <= self.degree <= 7:
            raise ValueError(f"degree must be within 1..7, got {self.degree}")
        if not (self.t_q > 0):
            raise ValueError(f"t_q must be positive, got {self.t_q}")
        if self.t_w is not None and not (self.t_w > 0):
            raise ValueError(f"t_w must be positive, got {self.t_w}")
        if self.grid_step is not None and not (self.grid_step > 0):
            raise ValueError(f"grid_step must be positive, got {self.grid_step}")
        if self.min_fit_rows < 2:
            raise ValueError("min_fit_rows must be at least 2")

    @property
    def alpha(self) -> float:
        """Execution acceleration ratio f_ctrl / f_interp."""
        return self.f_ctrl / self.f_interp


@dataclass(frozen=True, eq=False)
class ObservationFrame:
    """Robot state snapshot handed to the policy; payloads are carried opaquely."""

    timestamp: float
    joint_positions: np.ndarray
    instruction: str = ""
    visual: bytes = b""

    def __post_init__(self):
        q = np.asarray(self.joint_positions, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "joint_positions", q)


class ActiveTrajectoryCell:
    """Holder for the executing trajectory plus its wall-to-trajectory anchor.

    Only one task (the hand task) ever writes; swaps bump a generation
    counter so a tick can assert it observed a single consistent value.
    """

    __slots__ = ("trajectory", "anchor_wall", "anchor_traj", "generation")

    def __init__(self):
        self.trajectory: Trajectory | None = None
        self.anchor_wall = 0.0
        self.anchor_traj = 0.0
        self.generation = 0

    def install(self, traj: Trajectory, anchor_wall: float, anchor_traj: float) -> None:
        self.trajectory = traj
        self.anchor_wall = anchor_wall
        self.anchor_traj = anchor_traj
        self.generation += 1

    def swap(self, traj: Trajectory) -> None:
        """Replace the trajectory without touching the time anchor."""
        self.trajectory = traj
        self.generation += 1


def accelerate_time(t_wall: float, t_anchor: float, cfg: LinkerConfig) -> float:
    """Map wall time to trajectory-local time, sped up by alpha past the anchor."""
    return t_anchor + cfg.alpha * (t_wall - t_anchor)


def control_tick(
    t_now: float, cell: ActiveTrajectoryCell, cfg: LinkerConfig
) -> np.ndarray | None:
    """Command for this tick, or None when there is nothing new to command."""
    traj = cell.trajectory
    if traj is None:
        return None
    tau = cell.anchor_traj + cfg.alpha * (t_now - cell.anchor_wall)
    if not (traj.t_start <= tau <= traj.t_end):
        return None
    return evaluate(traj, tau, 0)


@dataclass(frozen=True, eq=False)
class TickRecord:
    command: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    segment: str
    faulted: bool = False


@dataclass(frozen=True, eq=False)
class ChunkOutcome:
    """What happened to one received chunk: installed, fused, or discarded."""

    kind: str
    k_star: int = 0
    t_a: float = 0.0
    reason: str = ""
    jump: np.ndarray | None = None
    knot_error: np.ndarray | None = None  # (3,) worst pos/vel/acc mismatch at new knots


def _ensure_coverage(traj: Trajectory, t_s: float) -> Trajectory:
    """Extend an exhausted trajectory with a hold piece so it reaches t_s."""
    if t_s <= traj.t_end:
        return traj
    hold = PolynomialTrajectory.constant(evaluate(traj, traj.t_end, 0), traj.t_end, t_s)
    return CompositeTrajectory((traj, hold))


def _smooth_mask_for(cfg: LinkerConfig, dim: int) -> np.ndarray:
    mask = np.ones(dim, dtype=bool)
    for ch in cfg.discrete_channels:
        if not 0 <= ch < dim:
            raise ValueError(f"discrete channel {ch} outside 0..{dim - 1}")
        mask[ch] = False
    return mask


def _fit_remainder(chunk: ActionChunk, t_now: float, cfg: LinkerConfig):
    """Drop stale rows and fit the rest; (k_star, trajectory or None, reason)."""
    k_star = stale_index(t_now, chunk.obs_time, chunk.sample_rate)
    if chunk.horizon - k_star < cfg.min_fit_rows:
        return k_star, None, "stale"
    try:
        fitted = smooth_chunk(
            chunk.trimmed(k_star), cfg.degree,
            _smooth_mask_for(cfg, chunk.dim), cfg.condition_limit,
        )
    except NumericalError as err:
        logger.warning("chunk fit rejected: %s", err)
        return k_star, None, "numerical"
    return k_star, fitted, ""


def _aligned_offset(current: Trajectory, fitted: PolynomialTrajectory,
                    t_s: float, chunk: ActionChunk, cfg: LinkerConfig) -> tuple[float, float]:
    """(alignment offset, effective window); the offset is 0 on an empty grid."""
    t_w = cfg.t_w or chunk.horizon / (2 * chunk.sample_rate)
    t_w_eff = min(t_w, fitted.t_end - fitted.t_start)
    grid = cfg.grid_step or 1.0 / cfg.f_interp
    if t_w_eff > 2 * grid:
        return align_offset(current, fitted, t_s, t_w_eff, grid), t_w_eff
    return 0.0, max(t_w_eff, grid)


def integrate_chunk(
    chunk: ActionChunk, t_now: float, cell: ActiveTrajectoryCell, cfg: LinkerConfig
) -> ChunkOutcome:
    """One integration step of the control loop's chunk-handling branch.

    Drops rows the measured latency has overtaken, smooths the remainder,
    then either installs it directly into an empty cell, fuses it onto
    the executing trajectory behind an atomic swap, or discards it as
    stale or too short. The returned outcome records which, plus the
    staleness index, alignment offset and would-be switch jump.
    """
    k_star, fitted, reason = _fit_remainder(chunk, t_now, cfg)
    if fitted is None:
        return ChunkOutcome(kind="discarded", k_star=k_star, reason=reason)

    if cell.trajectory is None:
        cell.install(fitted, t_now, fitted.t_start)
        return ChunkOutcome(kind="installed", k_star=k_star)

    t_s = cell.anchor_traj + cfg.alpha * (t_now - cell.anchor_wall)
    current = _ensure_coverage(cell.trajectory, t_s)
    t_a, t_w_eff = _aligned_offset(current, fitted, t_s, chunk, cfg)
    jump = discontinuity(current, fitted, t_s, t_a)

    spec = BlendSpec(t_s=t_s, t_a=t_a, t_q=cfg.t_q, t_w=t_w_eff)
    try:
        composite = fuse(current, fitted, spec)
    except ChunkTooShortError:
        return ChunkOutcome(kind="discarded", k_star=k_star, t_a=t_a, reason="short")
    knot_error = _blend_knot_error(composite, [t_s, t_s + cfg.t_q / 2, t_s + cfg.t_q])
    cell.swap(composite)
    return ChunkOutcome(kind="fused", k_star=k_star, t_a=t_a, jump=jump, knot_error=knot_error)


def _blend_knot_error(comp: CompositeTrajectory, knots: list[float]) -> np.ndarray:
    worst = np.zeros(3)
    starts = [p.t_start for p in comp.pieces]
    for t in knots:
        try:
            idx = starts.index(t)
        except ValueError:
            continue
        if idx == 0:
            continue
        left, right = comp.pieces[idx - 1], comp.pieces[idx]
        for order in range(3):
            diff = np.abs(left.evaluate(left.t_end, order) - right.evaluate(t, order)).max()
            worst[order] = max(worst[order], float(diff))
    return worst


class Executive:
    """Owns the trajectory cell and applies one of the three integration strategies."""

    def __init__(self, cfg: LinkerConfig, strategy: str = "rail", dim: int = 1,
                 initial_command: np.ndarray | None = None):
        if strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
        self.cfg = cfg
        self.strategy = strategy
        self.dim = dim
        self.cell = ActiveTrajectoryCell()
        self.last_command = (
            np.zeros(dim) if initial_command is None
            else np.asarray(initial_command, dtype=np.float64).copy()
        )
        self.counters = {"installed": 0, "fused": 0, "discarded": 0}
        self.faults = 0
        _smooth_mask_for(cfg, dim)  # fail fast on out-of-range discrete channels

    # -- hand task -----------------------------------------------------

    def trajectory_time(self, t_wall: float) -> float:
        return self.cell.anchor_traj + self.cfg.alpha * (t_wall - self.cell.anchor_wall)

    def tick(self, t_wall: float) -> TickRecord:
        """One control tick; never raises, degrades to holding the last command."""
        gen = self.cell.generation
        traj = self.cell.trajectory
        zeros = np.zeros(self.dim)
        if traj is None:
            record = TickRecord(self.last_command, zeros, zeros, "none")
        else:
            tau = self.trajectory_time(t_wall)
            if tau > traj.t_end:
                record = TickRecord(self.last_command, zeros, zeros, "hold")
            elif tau < traj.t_start:
                record = TickRecord(self.last_command, zeros, zeros, "none")
            else:
                try:
                    alpha = self.cfg.alpha
                    cmd = evaluate(traj, tau, 0)
                    vel = alpha * evaluate(traj, tau, 1)
                    acc = alpha * alpha * evaluate(traj, tau, 2)
                    self.last_command = cmd
                    record = TickRecord(cmd, vel, acc, piece_kind(traj, tau))
                except Exception:
                    logger.exception("fault during control tick at t=%.6f", t_wall)
                    self.faults += 1
                    record = TickRecord(self.last_command, zeros, zeros, "hold", faulted=True)
        if self.cell.generation != gen:
            # Single-writer discipline should make this unreachable.
            logger.error("trajectory cell changed identity mid-tick at t=%.6f", t_wall)
            self.faults += 1
        return record

    # -- brain-side integration ----------------------------------------

    def on_chunk(self, chunk: ActionChunk, t_wall: float) -> ChunkOutcome:
        try:
            if self.strategy == "raw":
                outcome = self._integrate_raw(chunk, t_wall)
            elif self.strategy == "naive":
                outcome = self._integrate_naive(chunk, t_wall)
            else:
                outcome = integrate_chunk(chunk, t_wall, self.cell, self.cfg)
        except ClockSkewError as err:
            logger.warning("clock skew on chunk: %s", err)
            outcome = ChunkOutcome(kind="discarded", reason="clock-skew")
        except RailError as err:
            logger.warning("chunk discarded after error: %s", err)
            outcome = ChunkOutcome(kind="discarded", reason=type(err).__name__)
        self.counters[outcome.kind] += 1
        logger.info(
            "chunk %s (k*=%d, t_a=%.4f%s)",
            outcome.kind, outcome.k_star, outcome.t_a,
            f", reason={outcome.reason}" if outcome.reason else "",
        )
        return outcome

    def _integrate_raw(self, chunk: ActionChunk, t_wall: float) -> ChunkOutcome:
        new = LinearTrajectory.from_chunk(chunk)
        if self.cell.trajectory is None:
            self.cell.install(new, t_wall, new.t_start)
            return ChunkOutcome(kind="installed")
        t_s = self.trajectory_time(t_wall)
        current = _ensure_coverage(self.cell.trajectory, t_s)
        shifted = new.shifted(t_s - new.t_start)
        jump = evaluate(current, t_s, 0) - shifted.evaluate(t_s, 0)
        pieces: list = []
        if t_s > current.t_start:
            head = current.clipped(current.t_start, t_s)
            pieces.extend(head.pieces if isinstance(head, CompositeTrajectory) else [head])
        pieces.append(shifted)
        self.cell.swap(CompositeTrajectory(tuple(pieces)))
        return ChunkOutcome(kind="fused", jump=jump)

    def _integrate_naive(self, chunk: ActionChunk, t_wall: float) -> ChunkOutcome:
        """Aligned hard switch: same preparation as fusion, no blend."""
        k_star, fitted, reason = _fit_remainder(chunk, t_wall, self.cfg)
        if fitted is None:
            return ChunkOutcome(kind="discarded", k_star=k_star, reason=reason)
        if self.cell.trajectory is None:
            self.cell.install(fitted, t_wall, fitted.t_start)
            return ChunkOutcome(kind="installed", k_star=k_star)

        t_s = self.trajectory_time(t_wall)
        current = _ensure_coverage(self.cell.trajectory, t_s)
        t_a, _ = _aligned_offset(current, fitted, t_s, chunk, self.cfg)
        jump = discontinuity(current, fitted, t_s, t_a)
        if (fitted.t_end - fitted.t_start) - t_a <= 0:
            return ChunkOutcome(kind="discarded", k_star=k_star, t_a=t_a, reason="short")
        shifted = fitted.shifted(t_s - fitted.t_start - t_a)
        pieces: list = []
        if t_s > current.t_start:
            head = current.clipped(current.t_start, t_s)
            pieces.extend(head.pieces if isinstance(head, CompositeTrajectory) else [head])
        pieces.append(shifted.clipped(t_s, shifted.t_end))
        self.cell.swap(CompositeTrajectory(tuple(pieces)))
        return ChunkOutcome(kind="fused", k_star=k_star, t_a=t_a, jump=jump)


# -- live (wall-clock) mode -------------------------------------------


@dataclass(eq=False)
class LiveRunResult:
    times: list[float] = field(default_factory=list)
    records: list[TickRecord] = field(default_factory=list)
    events: list[tuple[int, ChunkOutcome]] = field(default_factory=list)
    counters: dict = field(default_factory=dict)


class LiveLinker:
    """Wall-clock deployment of the executive: eye, brain and hand threads.

    The robot object only needs a .state array and an .apply(cmd, dt)
    method; the client must provide request_chunk(frame, timeout).
    """

    def __init__(self, cfg: LinkerConfig, client, robot, strategy: str = "rail",
                 instruction: str = "", request_timeout: float = 5.0, max_retries: int = 3):
        self.cfg = cfg
        self.client = client
        self.robot = robot
        self.executive = Executive(
            cfg, strategy, dim=len(robot.state), initial_command=robot.state
        )
        self.instruction = instruction
        self.request_timeout = request_timeout
        self.max_retries = max_retries
        self._latest_frame: ObservationFrame | None = None
        self._chunks: queue.Queue = queue.Queue(maxsize=8)
        self._stop = threading.Event()
        self._t0 = 0.0

    def _now(self) -> float:
        return time.monotonic() - self._t0

    def _eye_loop(self):
        period = 1.0 / self.cfg.f_obs
        while not self._stop.is_set():
            self._latest_frame = ObservationFrame(
                timestamp=self._now(),
                joint_positions=np.array(self.robot.state, dtype=np.float64),
                instruction=self.instruction,
            )
            self._stop.wait(period)

    def _brain_loop(self):
        period = 1.0 / self.cfg.f_infer
        failures = 0
        while not self._stop.is_set():
            frame = self._latest_frame
            if frame is None:
                self._stop.wait(0.005)
                continue
            started = self._now()
            try:
                chunk = self.client.request_chunk(frame, timeout=self.request_timeout)
                failures = 0
                try:
                    self._chunks.put_nowait(chunk)
                except queue.Full:
                    logger.warning("chunk queue full, dropping oldest")
                    self._chunks.get_nowait()
                    self._chunks.put_nowait(chunk)
            except (RequestTimeoutError, DisconnectedError, OSError) as err:
                failures += 1
                logger.warning("inference request failed (%d/%d): %s",
                               failures, self.max_retries, err)
                if failures > self.max_retries:
                    logger.error("giving up on inference; executing current trajectory out")
                    return
            self._stop.wait(max(0.0, period - (self._now() - started)))

    def run(self, duration: float) -> LiveRunResult:
        """Drive the control loop for a wall-clock duration; returns the tick log."""
        result = LiveRunResult()
        self._t0 = time.monotonic()
        eye = threading.Thread(target=self._eye_loop, daemon=True)
        brain = threading.Thread(target=self._brain_loop, daemon=True)
        eye.start()
        brain.start()
        period = 1.0 / self.cfg.f_ctrl
        n_ticks = int(round(duration * self.cfg.f_ctrl))
        try:
            for k in range(n_ticks + 1):
                target = k * period
                delay = target - self._now()
                if delay > 0:
                    time.sleep(delay)
                while True:
                    try:
                        chunk = self._chunks.get_nowait()
                    except queue.Empty:
                        break
                    result.events.append((k, self.executive.on_chunk(chunk, target)))
                record = self.executive.tick(target)
                self.robot.apply(record.command, period)
                result.times.append(target)
                result.records.append(record)
        finally:
            self._stop.set()
            eye.join(timeout=1.0)
            brain.join(timeout=self.request_timeout + 1.0)
        result.counters = dict(self.executive.counters)
        return result
