"""Synthetic chunk-emitting policy driven by a smooth reference generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..runtime import ObservationFrame
from ..trajectory import ActionChunk


@dataclass(frozen=True)
class ReferenceGenerator:
    """Smooth C2 reference motion g(s) per channel.

    sine: every channel follows amp * sin(2*pi*freq*s + i*phase_step) + offset,
    unbounded in s. ramp: channel 0 climbs linearly at ramp_rate over
    s in [0, ramp_span] while the others follow the sine shape of s; the
    monotone channel makes task progress recoverable from an observed
    joint state, which is what lets execution acceleration finish a
    motion early.
    """

    kind: str = "sine"
    channels: int = 1
    amp: float = 0.5
    freq_hz: float = 0.2
    phase_step: float = 0.0
    offset: float = 0.0
    ramp_rate: float = 0.08
    ramp_span: float = 12.0

    def __post_init__(self):
        if self.kind not in ("sine", "ramp"):
            raise ConfigError(f"unknown generator kind {self.kind!r}")
        if self.channels < 1:
            raise ConfigError("generator needs at least one channel")
        if self.kind == "ramp" and not (self.ramp_rate > 0 and self.ramp_span > 0):
            raise ConfigError("ramp generator needs positive ramp_rate and ramp_span")

    @property
    def span(self) -> float | None:
        """Total phase length of the motion, None when unbounded."""
        return self.ramp_span if self.kind == "ramp" else None

    def value(self, s) -> np.ndarray:
        """Reference positions at phase(s) s; returns (m,) or (n, m)."""
        s = np.asarray(s, dtype=np.float64)
        if self.kind == "ramp":
            s = np.clip(s, 0.0, self.ramp_span)
        phases = np.arange(self.channels) * self.phase_step
        vals = self.offset + self.amp * np.sin(
            2 * np.pi * self.freq_hz * s[..., None] + phases
        )
        if self.kind == "ramp":
            vals = vals.copy()
            vals[..., 0] = self.ramp_rate * s
        return vals

    def final_value(self) -> np.ndarray:
        if self.span is None:
            raise ConfigError("unbounded generator has no final value")
        return self.value(self.span)

    def progress_of(self, joints: np.ndarray) -> float:
        """Phase along the motion corresponding to an observed joint state."""
        if self.kind != "ramp":
            raise ConfigError("progress recovery needs the monotone ramp generator")
        return float(np.clip(joints[0] / self.ramp_rate, 0.0, self.ramp_span))


class SyntheticPolicy:
    """Stand-in for a chunk-predicting policy: reference values plus i.i.d. noise.

    mode 'time' samples the generator at the observation timestamp, so
    successive chunks disagree only through noise. mode 'track' recovers
    the task phase from the observed joint state first, the way a
    state-conditioned policy continues from wherever the robot actually
    is; it requires a generator with a monotone channel.
    """

    def __init__(
        self,
        generator: ReferenceGenerator,
        horizon: int,
        sample_rate: float,
        noise_amp: float = 0.0,
        rng: np.random.Generator | None = None,
        mode: str = "time",
    ):
        if mode not in ("time", "track"):
            raise ConfigError(f"policy mode must be 'time' or 'track', got {mode!r}")
        if horizon < 2:
            raise ConfigError(f"chunk horizon must be >= 2, got {horizon}")
        if noise_amp < 0:
            raise ConfigError(f"noise amplitude must be >= 0, got {noise_amp}")
        if mode == "track":
            generator.progress_of(np.zeros(generator.channels))  # validates kind
        self.generator = generator
        self.horizon = horizon
        self.sample_rate = float(sample_rate)
        self.noise_amp = float(noise_amp)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.mode = mode

    def __call__(self, obs: ObservationFrame) -> ActionChunk:
        if self.mode == "time":
            base = obs.timestamp
        else:
            base = self.generator.progress_of(obs.joint_positions)
        s = base + np.arange(self.horizon) / self.sample_rate
        actions = self.generator.value(s)
        if self.noise_amp > 0:
            actions = actions + self.rng.uniform(
                -self.noise_amp, self.noise_amp, actions.shape
            )
        return ActionChunk(
            obs_time=obs.timestamp, actions=actions, sample_rate=self.sample_rate
        )
