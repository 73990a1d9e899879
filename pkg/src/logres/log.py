"""Logs, digests and log certificates."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

from .crypto import DIGEST_SIZE, PublicRegistry, Signature, log_sig_payload, verify
from .entries import EntrySet, decode_entry_set, encode_entry_set, union, EncodingError

TAG_LOG = 0x03
ZERO_DIGEST = bytes(DIGEST_SIZE)


@dataclass(frozen=True)
class Log:
    epoch: int
    prev_digest: bytes
    entries: EntrySet
    expiration: int  # unix milliseconds

    @cached_property
    def entry_index(self) -> frozenset[bytes]:
        return frozenset(self.entries)

    def __contains__(self, entry: bytes) -> bool:
        return entry in self.entry_index


GENESIS = Log(epoch=0, prev_digest=ZERO_DIGEST, entries=(), expiration=0)


def encode_log(log: Log) -> bytes:
    """Canonical log bytes; ``mk_digest`` hashes exactly this."""
    return (
        bytes([TAG_LOG])
        + struct.pack(">QQ", log.epoch, log.expiration)
        + log.prev_digest
        + encode_entry_set(log.entries)
    )


def decode_log(buf: bytes | memoryview, offset: int = 0) -> tuple[Log, int]:
    buf = memoryview(buf)
    if len(buf) < offset + 1 + 16 + DIGEST_SIZE or buf[offset] != TAG_LOG:
        raise EncodingError("not a log encoding")
    epoch, expiration = struct.unpack_from(">QQ", buf, offset + 1)
    offset += 17
    prev = bytes(buf[offset:offset + DIGEST_SIZE])
    entries, offset = decode_entry_set(buf, offset + DIGEST_SIZE)
    return Log(epoch, prev, entries, expiration), offset


def mk_digest(log: Log) -> bytes:
    return hashlib.sha256(encode_log(log)).digest()


def mk_log(prev: Log, new_entries: EntrySet, period: int, now: int) -> Log:
    """Next log version: cumulative entries, chained to ``prev`` by digest."""
    return Log(
        epoch=prev.epoch + 1,
        prev_digest=mk_digest(prev),
        entries=union(prev.entries, new_entries),
        expiration=now + period,
    )


@dataclass(frozen=True)
class LogCertificate:
    log: Log
    sigs: tuple[Signature, ...]

    @property
    def signers(self) -> list[int]:
        return [s.signer for s in self.sigs]


class Reason(str, Enum):
    EXPIRED = "expired"
    INSUFFICIENT_SIGS = "insufficient_sigs"
    BAD_SIG = "bad_sig"
    DUPLICATE_SIGNER = "duplicate_signer"


@dataclass(frozen=True)
class CertificateCheck:
    """Outcome of :func:`validate_certificate`; truthy iff the certificate is valid."""

    ok: bool
    reason: Reason | None = None

    def __bool__(self) -> bool:
        return self.ok


def validate_certificate(cert: LogCertificate, reg: PublicRegistry, now: int) -> CertificateCheck:
    """A log is valid iff unexpired and signed by f+1 distinct registered nodes."""
    if now >= cert.log.expiration:
        return CertificateCheck(False, Reason.EXPIRED)
    signers = cert.signers
    if len(set(signers)) != len(signers):
        return CertificateCheck(False, Reason.DUPLICATE_SIGNER)
    payload = log_sig_payload(mk_digest(cert.log))
    if not all(verify(reg, s, payload) for s in cert.sigs):
        return CertificateCheck(False, Reason.BAD_SIG)
    if len(signers) < reg.f + 1:
        return CertificateCheck(False, Reason.INSUFFICIENT_SIGS)
    return CertificateCheck(True)


def encode_signature(s: Signature) -> bytes:
    return struct.pack(">HH", s.signer, len(s.data)) + s.data


def decode_signature(buf: memoryview, offset: int) -> tuple[Signature, int]:
    try:
        signer, size = struct.unpack_from(">HH", buf, offset)
    except struct.error as exc:
        raise EncodingError(str(exc)) from exc
    offset += 4
    if offset + size > len(buf):
        raise EncodingError("truncated signature")
    return Signature(signer, bytes(buf[offset:offset + size])), offset + size


def encode_certificate(cert: LogCertificate) -> bytes:
    parts = [encode_log(cert.log), struct.pack(">H", len(cert.sigs))]
    parts.extend(encode_signature(s) for s in cert.sigs)
    return b"".join(parts)


def decode_certificate(buf: bytes | memoryview) -> LogCertificate:
    buf = memoryview(buf)
    log, offset = decode_log(buf)
    try:
        (count,) = struct.unpack_from(">H", buf, offset)
    except struct.error as exc:
        raise EncodingError(str(exc)) from exc
    offset += 2
    sigs = []
    for _ in range(count):
        s, offset = decode_signature(buf, offset)
        sigs.append(s)
    if offset != len(buf):
        raise EncodingError("trailing bytes after certificate")
    return LogCertificate(log, tuple(sigs))
