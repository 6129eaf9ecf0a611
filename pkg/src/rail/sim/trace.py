"""Per-tick run records and their CSV serialization.

Schema: ``t,ch0_pos,ch0_vel,ch0_acc,...,segment,event`` with floats at 9
significant digits, one row per control tick. Event cells hold
``recv:k*=..;ta=..``, ``fuse``, ``discard`` (joined with ``|`` when one
tick carries several), or stay empty.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ..errors import TraceFormatError


def _fmt(x: float) -> str:
    return f"{x:.9g}"


@dataclass(eq=False)
class TraceEvent:
    """One chunk event: receipt (with staleness and alignment) or its outcome."""

    tick: int
    kind: str  # recv | fuse | discard
    k_star: int = 0
    t_a: float = 0.0
    jump: np.ndarray | None = None  # per-channel switch jump, fuse events only

    def to_cell(self) -> str:
        if self.kind == "recv":
            return f"recv:k*={self.k_star};ta={_fmt(self.t_a)}"
        return self.kind


_RECV_RE = re.compile(r"^recv:k\*=(-?\d+);ta=([^;|]+)$")


@dataclass(eq=False)
class RunTrace:
    """Commanded kinematics per control tick plus chunk-event annotations."""

    times: np.ndarray  # (N,)
    positions: np.ndarray  # (N, m)
    velocities: np.ndarray  # (N, m)
    accelerations: np.ndarray  # (N, m)
    segments: list[str]
    events: list[TraceEvent] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.times.shape[0]
        for name in ("positions", "velocities", "accelerations"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise ValueError(f"{name} rows ({arr.shape[0]}) disagree with times ({n})")
        if len(self.segments) != n:
            raise ValueError("segments length disagrees with times")
        if n > 1 and not (np.diff(self.times) > 0).all():
            raise ValueError("trace rows must be strictly time-ordered")

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def tick_period(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def events_at(self, tick: int) -> list[TraceEvent]:
        return [e for e in self.events if e.tick == tick]

    def header(self) -> list[str]:
        cols = ["t"]
        for c in range(self.dim):
            cols += [f"ch{c}_pos", f"ch{c}_vel", f"ch{c}_acc"]
        cols += ["segment", "event"]
        return cols

    def export_csv(self, path: str) -> None:
        by_tick: dict[int, list[TraceEvent]] = {}
        for e in self.events:
            by_tick.setdefault(e.tick, []).append(e)
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(",".join(self.header()) + "\n")
                for i in range(len(self.times)):
                    cells = [_fmt(float(self.times[i]))]
                    for c in range(self.dim):
                        cells += [
                            _fmt(float(self.positions[i, c])),
                            _fmt(float(self.velocities[i, c])),
                            _fmt(float(self.accelerations[i, c])),
                        ]
                    cells.append(self.segments[i])
                    cells.append("|".join(e.to_cell() for e in by_tick.get(i, ())))
                    fh.write(",".join(cells) + "\n")
        except OSError as err:
            raise OSError(f"cannot write trace to {path!r}: {err}") from err

    @classmethod
    def from_csv(cls, path: str) -> "RunTrace":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as err:
            raise OSError(f"cannot read trace from {path!r}: {err}") from err
        if not lines:
            raise TraceFormatError(f"{path!r} is empty")
        header = lines[0].split(",")
        if header[0] != "t" or header[-2:] != ["segment", "event"] or (len(header) - 3) % 3:
            raise TraceFormatError(f"{path!r} does not carry the trace schema")
        m = (len(header) - 3) // 3

        times, kin, segments, events = [], [], [], []
        for row_idx, line in enumerate(lines[1:]):
            cells = line.split(",")
            if len(cells) != len(header):
                raise TraceFormatError(
                    f"{path!r} row {row_idx + 1} has {len(cells)} cells, expected {len(header)}"
                )
            try:
                times.append(float(cells[0]))
                kin.append([float(v) for v in cells[1 : 1 + 3 * m]])
            except ValueError as err:
                raise TraceFormatError(f"{path!r} row {row_idx + 1}: {err}") from err
            segments.append(cells[-2])
            if cells[-1]:
                for token in cells[-1].split("|"):
                    events.append(_parse_event(token, row_idx, path))

        data = np.asarray(kin, dtype=np.float64).reshape(len(times), m, 3)
        return cls(
            times=np.asarray(times),
            positions=data[:, :, 0].copy(),
            velocities=data[:, :, 1].copy(),
            accelerations=data[:, :, 2].copy(),
            segments=segments,
            events=events,
            meta={"source": path},
        )


def _parse_event(token: str, tick: int, path: str) -> TraceEvent:
    if token in ("fuse", "discard"):
        return TraceEvent(tick=tick, kind=token)
    match = _RECV_RE.match(token)
    if match:
        return TraceEvent(tick=tick, kind="recv", k_star=int(match.group(1)),
                          t_a=float(match.group(2)))
    raise TraceFormatError(f"{path!r} row {tick + 1}: unknown event {token!r}")
