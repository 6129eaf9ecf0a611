"""Scenario configuration files and the deterministic scenario runner.

A scenario is a plain-text ``key = value`` file (``#`` starts a comment;
docs/scenarios.md lists every key). The runner interleaves the eye,
brain and hand tasks on one virtual clock, routes every inference
round trip through the real wire codec, and is bit-reproducible for a
given seed: identical runs export identical trace files.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from ..errors import ConfigError
from ..protocol import InferenceRequest, InferenceResponse, ServerCore, decode, encode
from ..runtime import Executive, LinkerConfig, ObservationFrame, STRATEGIES
from .clock import PRIO_DELIVER, PRIO_EYE, PRIO_HAND, PRIO_REQUEST, VirtualScheduler
from .latency import Delay, LatencyModel
from .policy import ReferenceGenerator, SyntheticPolicy
from .robot import SimulatedRobot
from .trace import RunTrace, TraceEvent

logger = logging.getLogger(__name__)

_STRATEGY_ALIASES = {
    "raw": "raw",
    "naive": "naive",
    "naive-switch": "naive",
    "rail": "rail",
}

_INT_KEYS = {"seed", "channels", "chunk_horizon", "degree"}
_FLOAT_KEYS = {
    "duration", "f_act", "f_ctrl", "f_interp", "f_obs", "f_infer",
    "t_q", "noise_amp", "amp", "freq_hz", "phase_step", "offset",
    "ramp_rate", "ramp_span", "postprocess_budget", "robot_lag_tau",
}
_OPT_FLOAT_KEYS = {"t_w", "grid_step"}
_STR_KEYS = {
    "strategy", "generator", "policy_mode", "latency_infer", "latency_obs",
    "latency_transport", "robot_model", "robot_init",
}
_TUPLE_KEYS = {"discrete_channels"}


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything one simulated run needs, with the documented defaults."""

    duration: float = 20.0
    seed: int = 0
    strategy: str = "rail"
    channels: int = 4
    chunk_horizon: int = 30
    f_act: float = 30.0
    f_ctrl: float = 100.0
    f_interp: float = 100.0
    f_obs: float = 30.0
    f_infer: float = 2.0
    degree: int = 3
    t_q: float = 0.2
    t_w: float | None = None
    grid_step: float | None = None
    discrete_channels: tuple[int, ...] = ()
    noise_amp: float = 0.01
    generator: str = "sine"
    amp: float = 0.5
    freq_hz: float = 0.2
    phase_step: float = 0.0
    offset: float = 0.0
    ramp_rate: float = 0.08
    ramp_span: float = 12.0
    policy_mode: str = "time"
    latency_infer: str = "uniform 0.1 0.3"
    latency_obs: str = "constant 0"
    latency_transport: str = "constant 0"
    postprocess_budget: float = 0.0
    robot_model: str = "ideal"
    robot_lag_tau: float = 0.05
    robot_init: str = "generator"

    def __post_init__(self):
        if self.strategy not in _STRATEGY_ALIASES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        object.__setattr__(self, "strategy", _STRATEGY_ALIASES[self.strategy])
        if not (self.duration > 0):
            raise ConfigError(f"duration must be positive, got {self.duration}")
        if self.channels < 1:
            raise ConfigError(f"need at least one channel, got {self.channels}")
        if self.chunk_horizon < 2:
            raise ConfigError(f"chunk horizon must be >= 2, got {self.chunk_horizon}")
        if self.policy_mode not in ("time", "track"):
            raise ConfigError(f"policy_mode must be 'time' or 'track', got {self.policy_mode!r}")
        if self.robot_init not in ("generator", "zeros"):
            raise ConfigError(f"robot_init must be 'generator' or 'zeros', got {self.robot_init!r}")
        for name in ("f_act", "f_ctrl", "f_interp", "f_obs"):
            value = getattr(self, name)
            if not (value > 0) or not float(value).is_integer():
                raise ConfigError(f"{name} must be a positive whole Hz value, got {value}")
        if not (self.f_infer > 0):
            raise ConfigError(f"f_infer must be positive, got {self.f_infer}")
        for ch in self.discrete_channels:
            if not 0 <= ch < self.channels:
                raise ConfigError(f"discrete channel {ch} outside 0..{self.channels - 1}")
        # Constructing the component configs surfaces their own errors early.
        self.linker_config()
        self.make_generator()
        self.make_latency()
        if self.policy_mode == "track" and self.generator != "ramp":
            raise ConfigError("policy_mode=track needs the monotone ramp generator")

    @classmethod
    def from_file(cls, path: str) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        values: dict = {}
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as err:
            raise ConfigError(f"cannot read scenario {path!r}: {err}") from err
        for lineno, line in enumerate(lines, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
            key, value = (part.strip() for part in text.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _coerce(key, value)
            except ValueError as err:
                raise ConfigError(f"{path}:{lineno}: {err}") from err
        return cls(**values)

    def with_overrides(self, strategy: str | None = None, seed: int | None = None,
                       duration: float | None = None) -> "ScenarioConfig":
        changes: dict = {}
        if strategy is not None:
            changes["strategy"] = strategy
        if seed is not None:
            changes["seed"] = seed
        if duration is not None:
            changes["duration"] = duration
        return replace(self, **changes) if changes else self

    def linker_config(self) -> LinkerConfig:
        try:
            return LinkerConfig(
                f_ctrl=self.f_ctrl,
                f_interp=self.f_interp,
                f_obs=self.f_obs,
                f_infer=self.f_infer,
                degree=self.degree,
                t_q=self.t_q,
                t_w=self.t_w,
                grid_step=self.grid_step,
                discrete_channels=self.discrete_channels,
            )
        except ValueError as err:
            raise ConfigError(str(err)) from err

    def make_generator(self) -> ReferenceGenerator:
        return ReferenceGenerator(
            kind=self.generator,
            channels=self.channels,
            amp=self.amp,
            freq_hz=self.freq_hz,
            phase_step=self.phase_step,
            offset=self.offset,
            ramp_rate=self.ramp_rate,
            ramp_span=self.ramp_span,
        )

    def make_latency(self) -> LatencyModel:
        return LatencyModel(
            infer=Delay.parse(self.latency_infer),
            obs=Delay.parse(self.latency_obs),
            transport=Delay.parse(self.latency_transport),
            postprocess=self.postprocess_budget,
        )

    def tick_rate(self) -> int:
        return math.lcm(
            int(self.f_ctrl), int(self.f_obs), int(self.f_interp), int(self.f_act), 1000
        )


def _coerce(key: str, value: str):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _OPT_FLOAT_KEYS:
        return None if value.lower() in ("auto", "none") else float(value)
    if key in _TUPLE_KEYS:
        return tuple(int(v) for v in value.split(",") if v.strip()) if value else ()
    if key in _STR_KEYS:
        return value
    raise ValueError(f"no coercion rule for key {key!r}")


class _Runner:
    """One scenario execution; everything it touches is seeded and virtual."""

    def __init__(self, sc: ScenarioConfig):
        self.sc = sc
        noise_ss, infer_ss, obs_ss, trans_ss = np.random.SeedSequence(sc.seed).spawn(4)
        self.obs_rng = np.random.default_rng(obs_ss)
        self.trans_rng = np.random.default_rng(trans_ss)
        infer_rng = np.random.default_rng(infer_ss)

        generator = sc.make_generator()
        initial = generator.value(0.0) if sc.robot_init == "generator" else np.zeros(sc.channels)
        self.robot = SimulatedRobot(initial, sc.robot_model, sc.robot_lag_tau)
        policy = SyntheticPolicy(
            generator,
            horizon=sc.chunk_horizon,
            sample_rate=sc.f_act,
            noise_amp=sc.noise_amp,
            rng=np.random.default_rng(noise_ss),
            mode=sc.policy_mode,
        )
        self.latency = sc.make_latency()
        self.core = ServerCore(policy, infer_delay=lambda: self.latency.infer.sample(infer_rng))
        self.executive = Executive(
            sc.linker_config(), sc.strategy, dim=sc.channels, initial_command=self.robot.state
        )
        self.sched = VirtualScheduler(sc.tick_rate())
        self.infer_period_ticks = max(1, round(self.sched.tick_rate / sc.f_infer))

        self.latest_frame: ObservationFrame | None = None
        self.in_flight = False
        self.issue_scheduled = False
        self.next_request_id = 1
        self.next_allowed_tick = 0
        self.pending_chunks: list = []

        self.row = 0
        self.times: list[float] = []
        self.kinematics: list[tuple] = []
        self.segments: list[str] = []
        self.events: list[TraceEvent] = []
        self.knot_errors: list[np.ndarray] = []

    # -- eye task --------------------------------------------------------

    def _eye(self):
        frame = ObservationFrame(
            timestamp=self.sched.seconds(self.sched.now_tick),
            joint_positions=self.robot.state.copy(),
        )
        self.sched.schedule_after(
            self.latency.obs.sample(self.obs_rng), PRIO_DELIVER,
            lambda: self._frame_ready(frame),
        )

    def _frame_ready(self, frame: ObservationFrame):
        self.latest_frame = frame
        self._consider_request()

    # -- brain task -------------------------------------------------------

    def _consider_request(self):
        if self.in_flight or self.issue_scheduled or self.latest_frame is None:
            return
        self.issue_scheduled = True
        self.sched.schedule(
            max(self.sched.now_tick, self.next_allowed_tick), PRIO_REQUEST, self._issue
        )

    def _issue(self):
        self.issue_scheduled = False
        if self.in_flight or self.latest_frame is None:
            return
        self.in_flight = True
        self.next_allowed_tick = self.sched.now_tick + self.infer_period_ticks
        frame_bytes = encode(InferenceRequest(self.next_request_id, self.latest_frame))
        self.next_request_id += 1
        self.sched.schedule_after(
            self.latency.transport.sample(self.trans_rng), PRIO_DELIVER,
            lambda: self._server_recv(frame_bytes),
        )

    def _server_recv(self, frame_bytes: bytes):
        infer_seconds, reply = self.core.handle_frame(frame_bytes)
        total = infer_seconds + self.latency.transport.sample(self.trans_rng)
        self.sched.schedule_after(total, PRIO_DELIVER, lambda: self._client_recv(reply))

    def _client_recv(self, reply: bytes):
        self.in_flight = False
        msg = decode(reply)
        if isinstance(msg, InferenceResponse):
            chunk = msg.to_chunk()
            if self.latency.postprocess > 0:
                self.sched.schedule_after(
                    self.latency.postprocess, PRIO_DELIVER,
                    lambda: self.pending_chunks.append(chunk),
                )
            else:
                self.pending_chunks.append(chunk)
        else:
            logger.warning("server answered with %r", msg)
        self._consider_request()

    # -- hand task -------------------------------------------------------

    def _hand(self):
        t = self.sched.seconds(self.sched.now_tick)
        pending, self.pending_chunks = self.pending_chunks, []
        for chunk in pending:
            outcome = self.executive.on_chunk(chunk, t)
            self.events.append(
                TraceEvent(self.row, "recv", outcome.k_star, outcome.t_a)
            )
            if outcome.kind == "fused":
                self.events.append(
                    TraceEvent(self.row, "fuse", outcome.k_star, outcome.t_a, outcome.jump)
                )
                if outcome.knot_error is not None:
                    self.knot_errors.append(outcome.knot_error)
            elif outcome.kind == "discarded":
                self.events.append(
                    TraceEvent(self.row, "discard", outcome.k_star, outcome.t_a)
                )
        record = self.executive.tick(t)
        self.robot.apply(record.command, 1.0 / self.sc.f_ctrl)
        self.times.append(t)
        self.kinematics.append((record.command, record.velocity, record.acceleration))
        self.segments.append(record.segment)
        self.row += 1

    # -- assembly ----------------------------------------------------------

    def run(self) -> RunTrace:
        sc = self.sc
        rate = self.sched.tick_rate
        ctrl_ticks = rate // int(sc.f_ctrl)
        obs_ticks = rate // int(sc.f_obs)
        n_ctrl = round(sc.duration * sc.f_ctrl)
        n_obs = math.ceil(sc.duration * sc.f_obs)
        for k in range(n_obs):
            self.sched.schedule(k * obs_ticks, PRIO_EYE, self._eye)
        for k in range(n_ctrl + 1):
            self.sched.schedule(k * ctrl_ticks, PRIO_HAND, self._hand)
        self.sched.run_until(n_ctrl * ctrl_ticks)

        pos, vel, acc = (np.array([k[i] for k in self.kinematics]) for i in range(3))
        return RunTrace(
            times=np.asarray(self.times),
            positions=pos,
            velocities=vel,
            accelerations=acc,
            segments=self.segments,
            events=self.events,
            meta={
                "strategy": sc.strategy,
                "seed": sc.seed,
                "duration": sc.duration,
                "f_ctrl": sc.f_ctrl,
                "f_act": sc.f_act,
                "alpha": sc.f_ctrl / sc.f_interp,
                "channels": sc.channels,
                "counters": dict(self.executive.counters),
                "faults": self.executive.faults,
                "knot_errors": (
                    np.stack(self.knot_errors) if self.knot_errors else np.zeros((0, 3))
                ),
            },
        )


def run_scenario(
    sc: ScenarioConfig,
    strategy: str | None = None,
    seed: int | None = None,
) -> RunTrace:
    """Deterministically simulate one scenario; same seed, same trace bytes."""
    if strategy is not None and strategy not in _STRATEGY_ALIASES:
        raise ConfigError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    sc = sc.with_overrides(strategy=strategy, seed=seed)
    return _Runner(sc).run()
