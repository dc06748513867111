"""Length-prefixed frames for the classical channel.

Frame: ``u32`` big-endian payload length, ``u8`` tag, payload.  Bitstrings
inside payloads are a ``u32`` bit count followed by the bits packed
most-significant-bit first, zero padded to a whole byte.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

HEADER = struct.Struct(">IB")
MAX_PAYLOAD = 1 << 28
DEFAULT_TIMEOUT_S = 30.0


class Tag(IntEnum):
    HELLO = 0x01
    DETECTIONS = 0x02
    ESTIMATE = 0x03
    SHUFFLE_SEED = 0x04
    PARITY_REQ = 0x05
    PARITY_RESP = 0x06
    VERIFY = 0x07
    PA_SEED = 0x08
    CONFIRM = 0x09
    OTP_BLOB = 0x0A
    ABORT = 0x0F


class FrameError(ValueError):
    kind = "framing_error"


class TruncatedFrame(FrameError):
    kind = "truncated"


class LengthOverrun(FrameError):
    kind = "length_overrun"


class UnknownTag(FrameError):
    kind = "unknown_tag"


class TransportTimeout(TimeoutError):
    pass


class TransportClosed(ConnectionError):
    pass


@dataclass(frozen=True)
class WireFrame:
    tag: Tag
    payload: bytes

    @property
    def length(self) -> int:
        return len(self.payload)


def encode_frame(tag: int, payload: bytes = b"") -> bytes:
    if len(payload) >= 1 << 32:
        raise LengthOverrun("payload does not fit a 32-bit length")
    return HEADER.pack(len(payload), int(Tag(tag))) + bytes(payload)


def decode_frame(data: bytes, max_payload: int = MAX_PAYLOAD) -> tuple[WireFrame, int]:
    """Parse one frame from the front of ``data``; returns (frame, bytes consumed)."""
    if len(data) < HEADER.size:
        raise TruncatedFrame(f"{len(data)} bytes is shorter than the frame header")
    length, tag = HEADER.unpack_from(data)
    if length > max_payload:
        raise LengthOverrun(f"declared length {length} exceeds limit {max_payload}")
    try:
        tag = Tag(tag)
    except ValueError:
        raise UnknownTag(f"unknown tag 0x{tag:02x}") from None
    end = HEADER.size + length
    if len(data) < end:
        raise TruncatedFrame(f"declared {length} payload bytes, received {len(data) - HEADER.size}")
    return WireFrame(tag, bytes(data[HEADER.size:end])), end


class SocketTransport:
    """Reliable ordered byte stream over a connected socket."""

    def __init__(self, sock: socket.socket, timeout: float = DEFAULT_TIMEOUT_S):
        self.sock = sock
        self.sock.settimeout(timeout)

    def send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except socket.timeout as exc:
            raise TransportTimeout("send timed out") from exc

    def recv_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(min(n - len(buf), 1 << 20))
            except socket.timeout as exc:
                raise TransportTimeout("receive timed out") from exc
            if not chunk:
                if buf:
                    raise TruncatedFrame(f"stream closed after {len(buf)} of {n} bytes")
                raise TransportClosed("peer closed the connection")
            buf += chunk
        return bytes(buf)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def write_frame(transport, tag: int, payload: bytes = b"") -> bytes:
    raw = encode_frame(tag, payload)
    transport.send(raw)
    return raw


def read_frame(transport, max_payload: int = MAX_PAYLOAD) -> tuple[WireFrame, bytes]:
    head = transport.recv_exact(HEADER.size)
    length, tag = HEADER.unpack(head)
    if length > max_payload:
        raise LengthOverrun(f"declared length {length} exceeds limit {max_payload}")
    try:
        Tag(tag)
    except ValueError:
        raise UnknownTag(f"unknown tag 0x{tag:02x}") from None
    body = transport.recv_exact(length) if length else b""
    frame, _ = decode_frame(head + body, max_payload)
    return frame, head + body


# -- payload helpers ---------------------------------------------------------


def pack_bits(bits) -> bytes:
    b = np.asarray(bits, dtype=np.uint8)
    return struct.pack(">I", len(b)) + np.packbits(b).tobytes()


def unpack_bits(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Returns (bits, new offset)."""
    if len(data) < offset + 4:
        raise TruncatedFrame("missing bitstring length")
    (n,) = struct.unpack_from(">I", data, offset)
    nbytes = (n + 7) // 8
    start = offset + 4
    if len(data) < start + nbytes:
        raise TruncatedFrame(f"bitstring of {n} bits needs {nbytes} bytes")
    raw = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=start)
    return np.unpackbits(raw)[:n].copy(), start + nbytes


def pack_u64s(values) -> bytes:
    v = np.asarray(values, dtype=np.uint64)
    return struct.pack(">I", len(v)) + v.astype(">u8").tobytes()


def unpack_u64s(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(data) < offset + 4:
        raise TruncatedFrame("missing array length")
    (n,) = struct.unpack_from(">I", data, offset)
    start, end = offset + 4, offset + 4 + 8 * n
    if len(data) < end:
        raise TruncatedFrame(f"array of {n} u64 truncated")
    return np.frombuffer(data[start:end], dtype=">u8").astype(np.uint64), end


def pack_u8s(values) -> bytes:
    v = np.asarray(values, dtype=np.uint8)
    return struct.pack(">I", len(v)) + v.tobytes()


def unpack_u8s(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(data) < offset + 4:
        raise TruncatedFrame("missing array length")
    (n,) = struct.unpack_from(">I", data, offset)
    start, end = offset + 4, offset + 4 + n
    if len(data) < end:
        raise TruncatedFrame(f"array of {n} bytes truncated")
    return np.frombuffer(data[start:end], dtype=np.uint8).copy(), end


def pack_u32s(values) -> bytes:
    v = np.asarray(values, dtype=np.uint32)
    return struct.pack(">I", len(v)) + v.astype(">u4").tobytes()


def unpack_u32s(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(data) < offset + 4:
        raise TruncatedFrame("missing array length")
    (n,) = struct.unpack_from(">I", data, offset)
    start, end = offset + 4, offset + 4 + 4 * n
    if len(data) < end:
        raise TruncatedFrame(f"array of {n} u32 truncated")
    return np.frombuffer(data[start:end], dtype=">u4").astype(np.int64), end
