"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RailError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(RailError):
    """Invalid scenario or linker configuration, raised before anything runs."""


class TrajectoryDomainError(RailError):
    """A trajectory was queried outside its time domain."""

    def __init__(self, t: float, t_start: float, t_end: float):
        self.t = t
        self.t_start = t_start
        self.t_end = t_end
        super().__init__(f"t={t:.9g} outside trajectory domain [{t_start:.9g}, {t_end:.9g}]")


class NumericalError(RailError):
    """A solve was rejected as too ill-conditioned to trust."""

    def __init__(self, message: str, condition: float):
        self.condition = condition
        super().__init__(f"{message} (condition estimate {condition:.3e})")


class ClockSkewError(RailError):
    """Observation timestamp lies in the future of the local clock."""


class ChunkTooShortError(RailError):
    """Incoming trajectory does not cover the requested alignment plus blend window."""


class CodecError(RailError):
    """Base for wire-format decode failures; carries the offending byte offset."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class LengthMismatchError(CodecError):
    """Frame length prefix disagrees with the bytes actually present."""


class UnknownTagError(CodecError):
    """Frame carries a message-type tag this protocol version does not define."""


class UnknownVersionError(CodecError):
    """Frame carries an unsupported protocol version byte."""


class TruncatedPayloadError(CodecError):
    """Payload ended early, or carried bytes beyond its declared fields."""


class ProtocolViolationError(RailError):
    """Peer broke the request-response discipline (bad id echo, double request)."""


class RequestTimeoutError(RailError):
    """No response arrived within the allotted time; the connection stays usable."""


class ServerFaultError(RailError):
    """Server answered with an error frame instead of a chunk."""

    def __init__(self, code: int, detail: str):
        self.code = code
        self.detail = detail
        super().__init__(f"server error 0x{code:02x}: {detail}")


class DisconnectedError(RailError):
    """Transport closed while a conversation was in progress."""


class TraceFormatError(RailError):
    """A trace CSV file does not match the expected schema."""
