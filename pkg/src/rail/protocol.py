"""Wire contract between the control client and the inference server.

One frame per message: a 4-byte big-endian length (counting everything
after itself), a 1-byte type tag, a 1-byte protocol version, then the
payload with numeric fields little-endian. The conversation is strict
request-response with at most one request outstanding per connection.
The byte layout is frozen in docs/protocol.md; this module provides the
codec, a transport-free per-connection server core reused verbatim by
the simulator, and blocking TCP client/server endpoints for live use.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import (
    CodecError,
    DisconnectedError,
    LengthMismatchError,
    ProtocolViolationError,
    RequestTimeoutError,
    ServerFaultError,
    TruncatedPayloadError,
    UnknownTagError,
    UnknownVersionError,
)
from .runtime import ObservationFrame
from .trajectory import ActionChunk

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 0x01
TAG_REQUEST = 0x01
TAG_RESPONSE = 0x02
TAG_ERROR = 0x7F

ERR_MALFORMED = 0x01
ERR_POLICY = 0x02
ERR_VIOLATION = 0x03

MAX_FRAME_BYTES = 1 << 24  # streams cannot resync past a corrupt length prefix


@dataclass(frozen=True, eq=False)
class InferenceRequest:
    request_id: int
    obs: ObservationFrame


@dataclass(frozen=True, eq=False)
class InferenceResponse:
    request_id: int
    obs_time: float
    sample_rate: float
    actions: np.ndarray  # (H, m) float64
    server_infer_seconds: float

    def __post_init__(self):
        object.__setattr__(
            self, "actions", np.ascontiguousarray(self.actions, dtype=np.float64)
        )

    def to_chunk(self) -> ActionChunk:
        return ActionChunk(
            obs_time=self.obs_time, actions=self.actions, sample_rate=self.sample_rate
        )


@dataclass(frozen=True)
class ErrorMessage:
    code: int
    detail: str


Message = InferenceRequest | InferenceResponse | ErrorMessage


def _request_payload(msg: InferenceRequest) -> bytes:
    obs = msg.obs
    joints = np.ascontiguousarray(obs.joint_positions, dtype="<f8")
    instruction = obs.instruction.encode("utf-8")
    parts = [
        struct.pack("<Q", msg.request_id),
        struct.pack("<d", obs.timestamp),
        struct.pack("<H", joints.shape[0]),
        joints.tobytes(),
        struct.pack("<I", len(instruction)),
        instruction,
        struct.pack("<I", len(obs.visual)),
        obs.visual,
    ]
    return b"".join(parts)


def _response_payload(msg: InferenceResponse) -> bytes:
    h, m = msg.actions.shape
    parts = [
        struct.pack("<Q", msg.request_id),
        struct.pack("<d", msg.obs_time),
        struct.pack("<H", h),
        struct.pack("<H", m),
        struct.pack("<d", msg.sample_rate),
        np.ascontiguousarray(msg.actions, dtype="<f8").tobytes(),
        struct.pack("<d", msg.server_infer_seconds),
    ]
    return b"".join(parts)


def encode(msg: Message) -> bytes:
    """Serialize a message into one complete frame."""
    if isinstance(msg, InferenceRequest):
        tag, payload = TAG_REQUEST, _request_payload(msg)
    elif isinstance(msg, InferenceResponse):
        tag, payload = TAG_RESPONSE, _response_payload(msg)
    elif isinstance(msg, ErrorMessage):
        detail = msg.detail.encode("utf-8")
        tag = TAG_ERROR
        payload = struct.pack("<B", msg.code) + struct.pack("<I", len(detail)) + detail
    else:
        raise TypeError(f"cannot encode {type(msg).__name__}")
    body = bytes([tag, PROTOCOL_VERSION]) + payload
    return struct.pack(">I", len(body)) + body


class _Reader:
    """Sequential payload reader that reports absolute byte offsets on failure."""

    def __init__(self, frame: bytes, start: int):
        self.frame = frame
        self.pos = start

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.frame):
            raise TruncatedPayloadError(f"payload ends inside {what}", len(self.frame))
        out = self.frame[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def f64(self, what: str) -> float:
        return struct.unpack("<d", self.take(8, what))[0]

    def finish(self):
        if self.pos != len(self.frame):
            raise TruncatedPayloadError(
                f"{len(self.frame) - self.pos} unexpected trailing bytes", self.pos
            )


def decode(frame: bytes) -> Message:
    """Parse one complete frame; every malformation raises a distinct CodecError."""
    if len(frame) < 4:
        raise LengthMismatchError("frame shorter than its length prefix", len(frame))
    declared = struct.unpack(">I", frame[:4])[0]
    if declared + 4 != len(frame):
        raise LengthMismatchError(
            f"length prefix declares {declared} bytes but frame carries {len(frame) - 4}", 0
        )
    if declared < 2:
        raise TruncatedPayloadError("frame too short for tag and version", 4)
    tag = frame[4]
    if tag not in (TAG_REQUEST, TAG_RESPONSE, TAG_ERROR):
        raise UnknownTagError(f"unknown message tag 0x{tag:02x}", 4)
    version = frame[5]
    if version != PROTOCOL_VERSION:
        raise UnknownVersionError(f"unsupported protocol version 0x{version:02x}", 5)

    r = _Reader(frame, 6)
    if tag == TAG_REQUEST:
        request_id = r.u64("request_id")
        timestamp = r.f64("obs_time")
        m = r.u16("joint count")
        joints = np.frombuffer(r.take(8 * m, "joint positions"), dtype="<f8").astype(np.float64)
        instruction = r.take(r.u32("instruction length"), "instruction").decode("utf-8")
        visual = r.take(r.u32("visual length"), "visual payload")
        r.finish()
        return InferenceRequest(
            request_id=request_id,
            obs=ObservationFrame(timestamp, joints, instruction, visual),
        )
    if tag == TAG_RESPONSE:
        request_id = r.u64("request_id")
        obs_time = r.f64("obs_time")
        h = r.u16("horizon")
        m = r.u16("channel count")
        sample_rate = r.f64("sample_rate")
        actions = np.frombuffer(r.take(8 * h * m, "actions"), dtype="<f8")
        infer_seconds = r.f64("server_infer_seconds")
        r.finish()
        return InferenceResponse(
            request_id=request_id,
            obs_time=obs_time,
            sample_rate=sample_rate,
            actions=actions.reshape(h, m).astype(np.float64),
            server_infer_seconds=infer_seconds,
        )
    code = r.u8("error code")
    detail = r.take(r.u32("detail length"), "detail").decode("utf-8", errors="replace")
    r.finish()
    return ErrorMessage(code=code, detail=detail)


class ServerCore:
    """Transport-free request handler for one connection.

    Feed it complete inbound frames; it returns the sampled inference
    delay plus the reply frame. Errors never escape: malformed input and
    policy failures both turn into error frames so the connection (and
    the control system behind it) outlives a bad packet.
    """

    def __init__(self, policy, infer_delay=None):
        self.policy = policy
        self.infer_delay = infer_delay or (lambda: 0.0)
        self.last_request_id: int | None = None

    def handle_frame(self, frame: bytes) -> tuple[float, bytes]:
        try:
            msg = decode(frame)
        except CodecError as err:
            return 0.0, encode(ErrorMessage(ERR_MALFORMED, str(err)))
        if not isinstance(msg, InferenceRequest):
            return 0.0, encode(
                ErrorMessage(ERR_VIOLATION, f"expected a request, got {type(msg).__name__}")
            )
        if self.last_request_id is not None and msg.request_id <= self.last_request_id:
            return 0.0, encode(
                ErrorMessage(
                    ERR_VIOLATION,
                    f"request_id {msg.request_id} not above {self.last_request_id}",
                )
            )
        self.last_request_id = msg.request_id

        delay = float(self.infer_delay())
        try:
            chunk = self.policy(msg.obs)
        except Exception as err:  # policy is user code; report, keep serving
            logger.exception("policy failed for request %d", msg.request_id)
            return delay, encode(ErrorMessage(ERR_POLICY, f"policy raised {err!r}"))
        reply = InferenceResponse(
            request_id=msg.request_id,
            obs_time=chunk.obs_time,
            sample_rate=chunk.sample_rate,
            actions=chunk.actions,
            server_infer_seconds=delay,
        )
        return delay, encode(reply)


# -- blocking TCP endpoints ---------------------------------------------


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        part = sock.recv(n - len(buf))
        if not part:
            raise DisconnectedError("connection closed mid-frame")
        buf.extend(part)
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes:
    """Read one length-prefixed frame from a stream socket."""
    header = _recv_exact(sock, 4)
    declared = struct.unpack(">I", header)[0]
    if declared > MAX_FRAME_BYTES:
        raise LengthMismatchError(f"frame length {declared} exceeds limit", 0)
    return header + _recv_exact(sock, declared)


class LinkClient:
    """Blocking request-response client with strictly increasing request ids."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._next_id = 1

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 5.0) -> "LinkClient":
        return cls(socket.create_connection((host, port), timeout=timeout))

    def close(self):
        self._sock.close()

    def request_chunk(self, obs: ObservationFrame, timeout: float = 5.0) -> ActionChunk:
        request_id = self._next_id
        self._next_id += 1
        self._sock.settimeout(timeout)
        try:
            self._sock.sendall(encode(InferenceRequest(request_id, obs)))
            while True:
                reply = decode(read_frame(self._sock))
                if isinstance(reply, ErrorMessage):
                    raise ServerFaultError(reply.code, reply.detail)
                if not isinstance(reply, InferenceResponse):
                    raise ProtocolViolationError(
                        f"server sent {type(reply).__name__} instead of a response"
                    )
                if reply.request_id == request_id:
                    return reply.to_chunk()
                if reply.request_id < request_id:
                    continue  # response to a request we already timed out
                raise ProtocolViolationError(
                    f"response id {reply.request_id} is ahead of request {request_id}"
                )
        except TimeoutError as err:
            raise RequestTimeoutError(f"no response within {timeout}s") from err
        except OSError as err:
            raise DisconnectedError(f"transport failed: {err}") from err


class LinkServer:
    """Threaded TCP server hosting one policy behind the request-response wire.

    The policy must either be safe under concurrent invocation or be
    wrapped with serial=True, which serializes calls across connections.
    """

    def __init__(self, policy, host: str = "127.0.0.1", port: int = 0,
                 infer_delay=None, serial: bool = True):
        lock = threading.Lock() if serial else None
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                core = ServerCore(outer.policy, outer.infer_delay)
                if lock is not None:
                    raw_policy = core.policy

                    def locked(obs):
                        with lock:
                            return raw_policy(obs)

                    core.policy = locked
                while True:
                    try:
                        frame = read_frame(self.request)
                    except (DisconnectedError, LengthMismatchError, OSError):
                        return
                    delay, reply = core.handle_frame(frame)
                    if delay > 0:
                        time.sleep(delay)
                    try:
                        self.request.sendall(reply)
                    except OSError:
                        return

        class Server(socketserver.ThreadingTCPServer):
            daemon_threads = True
            allow_reuse_address = True

        self.policy = policy
        self.infer_delay = infer_delay
        self._server = Server((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self):
        self._server.serve_forever()

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
