"""Binary framing for agent-to-server messages.

Every message is a 10-byte header followed by a payload:

    offset  size  field
    0       4     magic b"OFSM"
    4       1     version (1)
    5       1     msg_type (0 hello, 1 frame, 2 bye)
    6       4     payload length, u32 little-endian

Frame payload (all little-endian):

    u32 agent_id, u64 frame_id, f64 timestamp,
    f64 fx, f64 fy, f64 cx, f64 cy, u32 width, u32 height,
    u32 n_keypoints, u32 descriptor_dim, u8 flags, u32 keypoint_descriptor_dim,
    f32[n * 2] keypoints (u, v interleaved),
    f32[descriptor_dim] descriptor,
    i64[n] oracle point ids            (flags bit 0),
    f32[n * kd] keypoint descriptors   (flags bit 1)

Hello payload is a single u32 agent_id; bye has an empty payload. The
server answers every message with one status byte (see STATUS_*).
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import ProtocolError
from ..geometry import CameraIntrinsics
from ..packet import FramePacket

MAGIC = b"OFSM"
VERSION = 1
HEADER = struct.Struct("<4sBBI")
HEADER_SIZE = HEADER.size

MSG_HELLO, MSG_FRAME, MSG_BYE = 0, 1, 2

STATUS_OK = 0
STATUS_MALFORMED = 1
STATUS_BAD_VERSION = 2
STATUS_CLOSED = 3

_FRAME_FIXED = struct.Struct("<IQd4d2IIIBI")
_FLAG_ORACLE = 1
_FLAG_KDESC = 2
MAX_PAYLOAD = 64 * 1024 * 1024


def encode_header(msg_type: int, length: int) -> bytes:
    return HEADER.pack(MAGIC, VERSION, msg_type, length)


def decode_header(data: bytes):
    """(msg_type, payload length) from the first HEADER_SIZE bytes."""
    if len(data) < HEADER_SIZE:
        raise ProtocolError("truncated header", STATUS_MALFORMED)
    magic, version, msg_type, length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}", STATUS_MALFORMED)
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}", STATUS_BAD_VERSION)
    if msg_type not in (MSG_HELLO, MSG_FRAME, MSG_BYE):
        raise ProtocolError(f"unknown message type {msg_type}", STATUS_MALFORMED)
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload too large ({length} bytes)", STATUS_MALFORMED)
    return msg_type, length


def encode_frame_payload(p: FramePacket) -> bytes:
    n = p.n_keypoints
    flags = 0
    kd = 0
    if p.oracle_ids is not None:
        flags |= _FLAG_ORACLE
    if p.keypoint_descriptors is not None:
        flags |= _FLAG_KDESC
        kd = p.keypoint_descriptors.shape[1]
    intr = p.intrinsics
    try:
        head = _FRAME_FIXED.pack(p.agent_id, p.frame_id, p.timestamp, intr.fx, intr.fy,
                                 intr.cx, intr.cy, intr.width, intr.height, n,
                                 p.descriptor.shape[0], flags, kd)
    except struct.error as exc:
        raise ProtocolError(f"field out of range: {exc}", STATUS_MALFORMED) from exc
    parts = [head, p.keypoints.astype("<f4").tobytes(), p.descriptor.astype("<f4").tobytes()]
    if flags & _FLAG_ORACLE:
        parts.append(p.oracle_ids.astype("<i8").tobytes())
    if flags & _FLAG_KDESC:
        parts.append(p.keypoint_descriptors.astype("<f4").tobytes())
    return b"".join(parts)


def decode_frame_payload(payload: bytes) -> FramePacket:
    if len(payload) < _FRAME_FIXED.size:
        raise ProtocolError("frame payload shorter than its fixed part", STATUS_MALFORMED)
    (agent, frame, ts, fx, fy, cx, cy, w, h, n, dim, flags,
     kd) = _FRAME_FIXED.unpack_from(payload)
    if flags & ~(_FLAG_ORACLE | _FLAG_KDESC):
        raise ProtocolError(f"unknown flags {flags:#x}", STATUS_MALFORMED)
    if not flags & _FLAG_KDESC and kd:
        raise ProtocolError("keypoint descriptor width without descriptors", STATUS_MALFORMED)
    expect = _FRAME_FIXED.size + 8 * n + 4 * dim
    expect += 8 * n if flags & _FLAG_ORACLE else 0
    expect += 4 * n * kd if flags & _FLAG_KDESC else 0
    if len(payload) != expect:
        raise ProtocolError(f"frame payload is {len(payload)} bytes, expected {expect}",
                            STATUS_MALFORMED)
    off = _FRAME_FIXED.size
    kps = np.frombuffer(payload, "<f4", 2 * n, off).reshape(n, 2)
    off += 8 * n
    desc = np.frombuffer(payload, "<f4", dim, off)
    off += 4 * dim
    oracle = kdesc = None
    if flags & _FLAG_ORACLE:
        oracle = np.frombuffer(payload, "<i8", n, off)
        off += 8 * n
    if flags & _FLAG_KDESC:
        kdesc = np.frombuffer(payload, "<f4", n * kd, off).reshape(n, kd)
    try:
        intr = CameraIntrinsics(fx, fy, cx, cy, w, h)
    except ValueError as exc:
        raise ProtocolError(f"invalid intrinsics: {exc}", STATUS_MALFORMED) from exc
    return FramePacket(agent, frame, ts, intr, kps.astype(np.float32), desc.astype(np.float32),
                       None if oracle is None else oracle.astype(np.int64),
                       None if kdesc is None else kdesc.astype(np.float32))


def encode_message(msg_type: int, body=None) -> bytes:
    """Header plus payload; `body` is a FramePacket, an agent id or None."""
    if msg_type == MSG_FRAME:
        payload = encode_frame_payload(body)
    elif msg_type == MSG_HELLO:
        payload = struct.pack("<I", int(body or 0))
    elif msg_type == MSG_BYE:
        payload = b""
    else:
        raise ProtocolError(f"unknown message type {msg_type}", STATUS_MALFORMED)
    return encode_header(msg_type, len(payload)) + payload


def encode_frame(p: FramePacket) -> bytes:
    return encode_message(MSG_FRAME, p)


def decode_body(msg_type: int, payload: bytes):
    if msg_type == MSG_FRAME:
        return decode_frame_payload(payload)
    if msg_type == MSG_HELLO:
        if len(payload) != 4:
            raise ProtocolError("hello payload must be 4 bytes", STATUS_MALFORMED)
        return struct.unpack("<I", payload)[0]
    if payload:
        raise ProtocolError("bye carries no payload", STATUS_MALFORMED)
    return None


def decode_message(data: bytes, offset: int = 0):
    """(msg_type, body, bytes consumed) for the message starting at `offset`."""
    msg_type, length = decode_header(data[offset:offset + HEADER_SIZE])
    start = offset + HEADER_SIZE
    if len(data) - start < length:
        raise ProtocolError("truncated payload", STATUS_MALFORMED)
    body = decode_body(msg_type, bytes(data[start:start + length]))
    return msg_type, body, HEADER_SIZE + length


def _read_exact(stream, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf)) if hasattr(stream, "read") else stream.recv(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return bytes(buf)


def read_message(stream):
    """Read one message from a file-like object or socket; None at clean EOF."""
    head = _read_exact(stream, HEADER_SIZE)
    if not head:
        return None
    msg_type, length = decode_header(head)
    payload = _read_exact(stream, length)
    if len(payload) != length:
        raise ProtocolError("connection closed mid-payload", STATUS_MALFORMED)
    return msg_type, decode_body(msg_type, payload)
