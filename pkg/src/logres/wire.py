"""Binary encodings of protocol messages and the length-prefixed frame format.

All integers are big-endian.  A frame is ``u32 length || type || body`` where
``length`` counts the type byte plus the body.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .crypto import DIGEST_SIZE, Signature
from .entries import EncodingError, decode_entry_set, encode_entry_set
from .log import decode_signature, encode_signature
from .replicate import ReplicateMsg, WitnessedValue

FRAME_REPLICATION = 0x01
FRAME_LOG_SIG = 0x02
FRAME_SUBMIT = 0x10
FRAME_GET_CERT = 0x11
FRAME_CERT = 0x12
FRAME_SUBMIT_ACK = 0x13

FRAME_TYPES = {
    FRAME_REPLICATION, FRAME_LOG_SIG, FRAME_SUBMIT, FRAME_GET_CERT, FRAME_CERT, FRAME_SUBMIT_ACK,
}
MAX_FRAME = 256 * 1024 * 1024

ACK_ACCEPTED = 0
ACK_DUPLICATE = 1
ACK_REJECTED = 2


@dataclass(frozen=True)
class LogSigMsg:
    """Signing-phase message: a node's signature over the digest of its new log."""

    sender: int
    epoch: int
    digest: bytes
    signature: Signature


def encode_replicate_msg(m: ReplicateMsg) -> bytes:
    parts = [struct.pack(">HQIHI", m.sender, m.epoch, m.round, m.primary, len(m.values))]
    for wv in m.values:
        parts.append(encode_entry_set(wv.value))
        parts.append(struct.pack(">H", len(wv.sigs)))
        parts.extend(encode_signature(s) for s in wv.sigs)
    return b"".join(parts)


def decode_replicate_msg(buf: bytes | memoryview, offset: int = 0) -> tuple[ReplicateMsg, int]:
    buf = memoryview(buf)
    try:
        sender, epoch, rnd, primary, count = struct.unpack_from(">HQIHI", buf, offset)
        offset += 20
        values = []
        for _ in range(count):
            value, offset = decode_entry_set(buf, offset)
            (nsig,) = struct.unpack_from(">H", buf, offset)
            offset += 2
            sigs = []
            for _ in range(nsig):
                s, offset = decode_signature(buf, offset)
                sigs.append(s)
            values.append(WitnessedValue(value, primary, tuple(sigs)))
    except struct.error as exc:
        raise EncodingError(str(exc)) from exc
    return ReplicateMsg(sender, epoch, rnd, primary, tuple(values)), offset


def encode_bundle(msgs: tuple[ReplicateMsg, ...]) -> bytes:
    return struct.pack(">H", len(msgs)) + b"".join(encode_replicate_msg(m) for m in msgs)


def decode_bundle(buf: bytes | memoryview) -> tuple[ReplicateMsg, ...]:
    buf = memoryview(buf)
    if len(buf) < 2:
        raise EncodingError("truncated bundle")
    (count,) = struct.unpack_from(">H", buf, 0)
    offset = 2
    out = []
    for _ in range(count):
        m, offset = decode_replicate_msg(buf, offset)
        out.append(m)
    if offset != len(buf):
        raise EncodingError("trailing bytes after bundle")
    return tuple(out)


def encode_log_sig(m: LogSigMsg) -> bytes:
    return (
        struct.pack(">HQ", m.sender, m.epoch)
        + m.digest
        + struct.pack(">H", len(m.signature.data))
        + m.signature.data
    )


def decode_log_sig(buf: bytes | memoryview) -> LogSigMsg:
    buf = memoryview(buf)
    try:
        sender, epoch = struct.unpack_from(">HQ", buf, 0)
        digest = bytes(buf[10:10 + DIGEST_SIZE])
        (size,) = struct.unpack_from(">H", buf, 10 + DIGEST_SIZE)
    except struct.error as exc:
        raise EncodingError(str(exc)) from exc
    start = 12 + DIGEST_SIZE
    if len(digest) != DIGEST_SIZE or start + size != len(buf):
        raise EncodingError("malformed log signature message")
    return LogSigMsg(sender, epoch, digest, Signature(sender, bytes(buf[start:])))


def frame(kind: int, body: bytes = b"") -> bytes:
    if kind not in FRAME_TYPES:
        raise EncodingError(f"unknown frame type {kind:#x}")
    return struct.pack(">IB", len(body) + 1, kind) + body


def split_frame(data: bytes) -> tuple[int, bytes]:
    """Parse one complete frame (header included); the whole frame or nothing."""
    if len(data) < 5:
        raise EncodingError("short frame")
    (length,) = struct.unpack_from(">I", data, 0)
    if length < 1 or length + 4 != len(data):
        raise EncodingError("frame length mismatch")
    kind = data[4]
    if kind not in FRAME_TYPES:
        raise EncodingError(f"unknown frame type {kind:#x}")
    return kind, data[5:]


def encode_ack(status: int, reason: str = "") -> bytes:
    return bytes([status]) + reason.encode()


def decode_ack(body: bytes) -> tuple[int, str]:
    if not body:
        raise EncodingError("empty ack")
    return body[0], body[1:].decode(errors="replace")
