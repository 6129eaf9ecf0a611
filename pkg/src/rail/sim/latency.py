"""Latency models for the inference, sensing and transport legs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class Delay:
    """One delay distribution: constant, uniform[a, b] or lognormal(mu, sigma)."""

    kind: str
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind == "constant":
            if self.a < 0:
                raise ConfigError(f"constant delay must be >= 0, got {self.a}")
        elif self.kind == "uniform":
            if not (0 <= self.a <= self.b):
                raise ConfigError(f"uniform delay needs 0 <= a <= b, got [{self.a}, {self.b}]")
        elif self.kind == "lognormal":
            if self.b <= 0:
                raise ConfigError(f"lognormal sigma must be positive, got {self.b}")
        else:
            raise ConfigError(f"unknown delay kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "Delay":
        """Parse 'constant 0.1' | 'uniform 0.1 0.3' | 'lognormal -2.0 0.5'."""
        parts = text.split()
        if not parts:
            raise ConfigError("empty delay expression")
        kind, args = parts[0], parts[1:]
        try:
            vals = [float(v) for v in args]
        except ValueError as err:
            raise ConfigError(f"bad delay parameters in {text!r}") from err
        if kind == "constant" and len(vals) == 1:
            return cls("constant", vals[0])
        if kind in ("uniform", "lognormal") and len(vals) == 2:
            return cls(kind, vals[0], vals[1])
        raise ConfigError(f"malformed delay expression {text!r}")

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "constant":
            return self.a
        if self.kind == "uniform":
            return float(rng.uniform(self.a, self.b))
        return float(rng.lognormal(self.a, self.b))


@dataclass(frozen=True)
class LatencyModel:
    """All delay legs of one round trip, each with its own seeded stream.

    The sensor delay is hidden from the client by design: it postpones
    frame delivery while timestamps stay honest to the acquisition
    instant, so it shows up only as extra staleness.
    """

    infer: Delay = Delay("constant", 0.0)
    obs: Delay = Delay("constant", 0.0)
    transport: Delay = Delay("constant", 0.0)
    postprocess: float = 0.0

    def __post_init__(self):
        if self.postprocess < 0:
            raise ConfigError(f"postprocess budget must be >= 0, got {self.postprocess}")
