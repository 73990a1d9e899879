"""Client side of the framed protocol: submit entries, fetch certificates."""

from __future__ import annotations

import asyncio
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..entries import EncodingError
from ..log import LogCertificate, decode_certificate
from ..wire import (
    FRAME_CERT,
    FRAME_GET_CERT,
    FRAME_SUBMIT,
    FRAME_SUBMIT_ACK,
    decode_ack,
    frame,
)
from .config import Address
from .transport import read_frame

ACK_NAMES = {0: "accepted", 1: "duplicate", 2: "rejected"}


class ClientError(RuntimeError):
    pass


@dataclass(frozen=True)
class SubmitResult:
    address: str
    status: str  # accepted | duplicate | rejected | unreachable
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status in ("accepted", "duplicate")


def _addr(a: str | Address) -> Address:
    return a if isinstance(a, Address) else Address.parse(a)


async def _submit_one(entries: Sequence[bytes], address: Address, timeout: float) -> list[SubmitResult]:
    reader, writer = await asyncio.wait_for(asyncio.open_connection(address.host, address.port), timeout)
    try:
        writer.write(b"".join(frame(FRAME_SUBMIT, e) for e in entries))
        await writer.drain()
        out = []
        for _ in entries:
            got = await asyncio.wait_for(read_frame(reader), timeout)
            if got is None or got[0] != FRAME_SUBMIT_ACK:
                raise ClientError(f"{address}: expected submit ack")
            status, reason = decode_ack(got[1])
            out.append(SubmitResult(str(address), ACK_NAMES.get(status, f"status-{status}"), reason))
        return out
    finally:
        writer.close()


async def submit_batch(entries: Sequence[bytes], address: str | Address, timeout: float = 5.0) -> list[SubmitResult]:
    """Pipeline many submissions over one connection to one node."""
    address = _addr(address)
    try:
        return await _submit_one(list(entries), address, timeout)
    except (OSError, asyncio.TimeoutError, EncodingError, asyncio.IncompleteReadError) as exc:
        return [SubmitResult(str(address), "unreachable", str(exc) or type(exc).__name__) for _ in entries]


async def submit(entry: bytes, addresses: Iterable[str | Address], timeout: float = 5.0) -> list[SubmitResult]:
    """Send ``entry`` to every address (f+1 of them guarantee inclusion); one result each."""
    batches = await asyncio.gather(*(submit_batch([entry], a, timeout) for a in addresses))
    return [b[0] for b in batches]


async def get_certificate(address: str | Address, timeout: float = 5.0) -> LogCertificate | None:
    """Latest certificate published by the node, or None if it has none yet."""
    address = _addr(address)
    reader, writer = await asyncio.wait_for(asyncio.open_connection(address.host, address.port), timeout)
    try:
        writer.write(frame(FRAME_GET_CERT))
        await writer.drain()
        got = await asyncio.wait_for(read_frame(reader), timeout)
    finally:
        writer.close()
    if got is None or got[0] != FRAME_CERT:
        raise ClientError(f"{address}: expected certificate frame")
    if not got[1]:
        return None
    return decode_certificate(got[1])


def accepted(results: Iterable[SubmitResult]) -> int:
    return sum(1 for r in results if r.ok)

