"""Minimal joint-space robot: ideal tracking or first-order lag."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError


class SimulatedRobot:
    """Holds one joint-state vector, updated only when a command tick applies it."""

    def __init__(self, initial: np.ndarray, model: str = "ideal", lag_tau: float = 0.05):
        if model not in ("ideal", "lag"):
            raise ConfigError(f"robot model must be 'ideal' or 'lag', got {model!r}")
        if model == "lag" and lag_tau <= 0:
            raise ConfigError(f"lag time constant must be positive, got {lag_tau}")
        self.state = np.asarray(initial, dtype=np.float64).reshape(-1).copy()
        self.model = model
        self.lag_tau = lag_tau

    def apply(self, command: np.ndarray, dt: float) -> None:
        command = np.asarray(command, dtype=np.float64)
        if self.model == "ideal":
            self.state = command.copy()
        else:
            gain = 1.0 - math.exp(-dt / self.lag_tau)
            self.state = self.state + gain * (command - self.state)
