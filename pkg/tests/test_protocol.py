import socket
import struct
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rail import ObservationFrame, ActionChunk
from rail.errors import (
    LengthMismatchError,
    ProtocolViolationError,
    RequestTimeoutError,
    ServerFaultError,
    TruncatedPayloadError,
    UnknownTagError,
    UnknownVersionError,
    CodecError,
)
from rail.protocol import (
    ERR_MALFORMED,
    ERR_POLICY,
    ERR_VIOLATION,
    ErrorMessage,
    InferenceRequest,
    InferenceResponse,
    LinkClient,
    LinkServer,
    ServerCore,
    decode,
    encode,
    read_frame,
)

finite_f64 = st.floats(allow_nan=False, allow_infinity=False, width=64)


def make_request(rng):
    m = int(rng.integers(1, 8))
    return InferenceRequest(
        request_id=int(rng.integers(0, 2**63)),
        obs=ObservationFrame(
            timestamp=float(rng.uniform(0, 1e6)),
            joint_positions=rng.normal(size=m),
            instruction="pick up the bottle" if rng.random() < 0.5 else "",
            visual=bytes(rng.integers(0, 256, size=int(rng.integers(0, 64)), dtype=np.uint8)),
        ),
    )


def make_response(rng):
    h, m = int(rng.integers(1, 40)), int(rng.integers(1, 8))
    return InferenceResponse(
        request_id=int(rng.integers(0, 2**63)),
        obs_time=float(rng.uniform(0, 1e6)),
        sample_rate=float(rng.uniform(1, 100)),
        actions=rng.normal(size=(h, m)),
        server_infer_seconds=float(rng.uniform(0, 1)),
    )


def assert_messages_equal(a, b):
    assert type(a) is type(b)
    if isinstance(a, InferenceRequest):
        assert a.request_id == b.request_id
        assert a.obs.timestamp == b.obs.timestamp
        np.testing.assert_array_equal(a.obs.joint_positions, b.obs.joint_positions)
        assert a.obs.instruction == b.obs.instruction
        assert a.obs.visual == b.obs.visual
    elif isinstance(a, InferenceResponse):
        assert a.request_id == b.request_id
        assert a.obs_time == b.obs_time
        assert a.sample_rate == b.sample_rate
        np.testing.assert_array_equal(a.actions, b.actions)
        assert a.server_infer_seconds == b.server_infer_seconds
    else:
        assert (a.code, a.detail) == (b.code, b.detail)


class TestCodec:
    def test_seeded_round_trips(self):
        rng = np.random.default_rng(99)
        for _ in range(500):
            msg = make_request(rng) if rng.random() < 0.5 else make_response(rng)
            assert_messages_equal(decode(encode(msg)), msg)

    @given(
        request_id=st.integers(0, 2**64 - 1),
        timestamp=finite_f64,
        joints=st.lists(finite_f64, min_size=1, max_size=12),
        instruction=st.text(max_size=40),
        visual=st.binary(max_size=64),
    )
    @settings(max_examples=200, deadline=None)
    def test_request_round_trip_property(self, request_id, timestamp, joints, instruction, visual):
        msg = InferenceRequest(
            request_id,
            ObservationFrame(timestamp, np.array(joints), instruction, visual),
        )
        assert_messages_equal(decode(encode(msg)), msg)

    def test_error_message_round_trip(self):
        msg = ErrorMessage(ERR_POLICY, "policy raised ValueError('x')")
        assert_messages_equal(decode(encode(msg)), msg)

    def test_unknown_tag_at_offset_4(self):
        frame = bytearray(encode(ErrorMessage(1, "x")))
        frame[4] = 0x03
        with pytest.raises(UnknownTagError) as exc:
            decode(bytes(frame))
        assert exc.value.offset == 4

    def test_unknown_version_at_offset_5(self):
        frame = bytearray(encode(ErrorMessage(1, "x")))
        frame[5] = 0x09
        with pytest.raises(UnknownVersionError) as exc:
            decode(bytes(frame))
        assert exc.value.offset == 5

    def test_length_mismatch(self):
        frame = encode(ErrorMessage(1, "x")) + b"extra"
        with pytest.raises(LengthMismatchError) as exc:
            decode(frame)
        assert exc.value.offset == 0

    def test_response_with_wrong_float_count(self):
        # Claims H=2, m=3 but carries only 5 floats: the actions reader
        # consumes into the trailing field and the frame comes up short.
        payload = (
            struct.pack("<Q", 1)
            + struct.pack("<d", 0.0)
            + struct.pack("<H", 2)
            + struct.pack("<H", 3)
            + struct.pack("<d", 30.0)
            + np.arange(5.0).astype("<f8").tobytes()
        )
        body = bytes([0x02, 0x01]) + payload
        frame = struct.pack(">I", len(body)) + body
        with pytest.raises(TruncatedPayloadError):
            decode(frame)

    def test_truncation_at_every_byte_boundary(self):
        rng = np.random.default_rng(3)
        frame = encode(make_request(rng))
        for cut in range(len(frame)):
            with pytest.raises(CodecError):
                decode(frame[:cut])

    def test_trailing_bytes_inside_payload_rejected(self):
        msg = ErrorMessage(1, "x")
        body = encode(msg)[4:] + b"\x00"
        frame = struct.pack(">I", len(body)) + body
        with pytest.raises(TruncatedPayloadError):
            decode(frame)


def constant_policy(obs):
    h, m = 4, obs.joint_positions.shape[0]
    return ActionChunk(obs.timestamp, np.tile(obs.joint_positions, (h, 1)), 30.0)


class TestServerCore:
    def obs_frame(self, t=1.0):
        return ObservationFrame(t, np.array([0.1, 0.2]))

    def test_request_gets_response_with_sampled_delay(self):
        core = ServerCore(constant_policy, infer_delay=lambda: 0.15)
        delay, reply = core.handle_frame(encode(InferenceRequest(1, self.obs_frame())))
        assert delay == 0.15
        msg = decode(reply)
        assert isinstance(msg, InferenceResponse)
        assert msg.request_id == 1
        assert msg.server_infer_seconds == 0.15
        assert msg.actions.shape == (4, 2)

    def test_garbage_frame_yields_error_then_serves_next(self):
        core = ServerCore(constant_policy)
        _, reply = core.handle_frame(b"\x00\x00\x00\x02garbage")
        err = decode(reply)
        assert isinstance(err, ErrorMessage) and err.code == ERR_MALFORMED
        _, reply = core.handle_frame(encode(InferenceRequest(1, self.obs_frame())))
        assert isinstance(decode(reply), InferenceResponse)

    def test_request_ids_must_increase(self):
        core = ServerCore(constant_policy)
        core.handle_frame(encode(InferenceRequest(5, self.obs_frame())))
        _, reply = core.handle_frame(encode(InferenceRequest(5, self.obs_frame())))
        err = decode(reply)
        assert isinstance(err, ErrorMessage) and err.code == ERR_VIOLATION

    def test_policy_exception_reported_not_fatal(self):
        def bad_policy(obs):
            raise RuntimeError("boom")

        core = ServerCore(bad_policy)
        _, reply = core.handle_frame(encode(InferenceRequest(1, self.obs_frame())))
        err = decode(reply)
        assert isinstance(err, ErrorMessage) and err.code == ERR_POLICY


class TestLiveEndpoints:
    def test_request_chunk_over_tcp(self):
        server = LinkServer(constant_policy, port=0)
        server.start()
        try:
            client = LinkClient.connect(*server.address)
            chunk = client.request_chunk(ObservationFrame(2.5, np.array([0.3, 0.4, 0.5])))
            assert chunk.obs_time == 2.5
            assert chunk.actions.shape == (4, 3)
            assert chunk.sample_rate == 30.0
            client.close()
        finally:
            server.stop()

    def test_timeout_then_connection_reusable(self):
        delays = iter([0.5, 0.0, 0.0])
        server = LinkServer(constant_policy, port=0, infer_delay=lambda: next(delays))
        server.start()
        try:
            client = LinkClient.connect(*server.address)
            obs = ObservationFrame(1.0, np.array([0.1]))
            with pytest.raises(RequestTimeoutError):
                client.request_chunk(obs, timeout=0.1)
            time.sleep(0.6)  # let the late response land in the buffer
            chunk = client.request_chunk(obs, timeout=2.0)  # skips the stale reply
            assert chunk.actions.shape == (4, 1)
            client.close()
        finally:
            server.stop()

    def test_out_of_order_response_is_violation(self):
        # A fake server that echoes request_id + 1.
        def fake_server(conn):
            frame = read_frame(conn)
            req = decode(frame)
            reply = InferenceResponse(
                request_id=req.request_id + 1,
                obs_time=req.obs.timestamp,
                sample_rate=30.0,
                actions=np.zeros((2, 1)),
                server_infer_seconds=0.0,
            )
            conn.sendall(encode(reply))

        listener = socket.create_server(("127.0.0.1", 0))
        addr = listener.getsockname()

        def accept_once():
            conn, _ = listener.accept()
            with conn:
                fake_server(conn)

        thread = threading.Thread(target=accept_once, daemon=True)
        thread.start()
        client = LinkClient(socket.create_connection(addr))
        with pytest.raises(ProtocolViolationError):
            client.request_chunk(ObservationFrame(0.0, np.array([0.0])), timeout=2.0)
        client.close()
        listener.close()

    def test_server_error_frame_raises_server_fault(self):
        def bad_policy(obs):
            raise RuntimeError("no model loaded")

        server = LinkServer(bad_policy, port=0)
        server.start()
        try:
            client = LinkClient.connect(*server.address)
            with pytest.raises(ServerFaultError) as exc:
                client.request_chunk(ObservationFrame(0.0, np.array([0.0])), timeout=2.0)
            assert exc.value.code == ERR_POLICY
            client.close()
        finally:
            server.stop()
