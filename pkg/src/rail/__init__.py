"""rail: an asynchronous linker between chunk-emitting policies and real-time control.

Smooths noisy action chunks with closed-form polynomial fits, fuses
successive chunks with continuity up to acceleration through a
dual-quintic blend, and executes the composite trajectory in a
non-blocking client-server control loop with configurable execution
acceleration.
"""

from .errors import (
    ChunkTooShortError,
    ClockSkewError,
    CodecError,
    ConfigError,
    DisconnectedError,
    NumericalError,
    ProtocolViolationError,
    RailError,
    RequestTimeoutError,
    TrajectoryDomainError,
)
from .fusion import (
    BlendSpec,
    BoundaryState,
    align_offset,
    boundary_state,
    discontinuity,
    fuse,
    solve_quintic_pair,
    stale_index,
)
from .runtime import (
    ActiveTrajectoryCell,
    Executive,
    LinkerConfig,
    ObservationFrame,
    accelerate_time,
    control_tick,
    integrate_chunk,
)
from .smoothing import VandermondeSystem, build_vandermonde, smooth_chunk, solve_least_squares
from .trajectory import (
    ActionChunk,
    CompositeTrajectory,
    LinearTrajectory,
    PolynomialTrajectory,
    QuinticSegment,
    clip_domain,
    evaluate,
    evaluate_many,
)

__version__ = "0.1.0"

__all__ = [
    "ActionChunk",
    "ActiveTrajectoryCell",
    "BlendSpec",
    "BoundaryState",
    "ChunkTooShortError",
    "ClockSkewError",
    "CodecError",
    "CompositeTrajectory",
    "ConfigError",
    "DisconnectedError",
    "Executive",
    "LinearTrajectory",
    "LinkerConfig",
    "NumericalError",
    "ObservationFrame",
    "PolynomialTrajectory",
    "ProtocolViolationError",
    "QuinticSegment",
    "RailError",
    "RequestTimeoutError",
    "TrajectoryDomainError",
    "VandermondeSystem",
    "accelerate_time",
    "align_offset",
    "boundary_state",
    "build_vandermonde",
    "clip_domain",
    "control_tick",
    "discontinuity",
    "evaluate",
    "evaluate_many",
    "fuse",
    "integrate_chunk",
    "smooth_chunk",
    "solve_least_squares",
    "solve_quintic_pair",
    "stale_index",
]
