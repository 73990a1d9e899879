"""Framed TCP transport: frame I/O, outbound peer links with reconnect and
optional link emulation (one-way latency plus bandwidth serialization)."""

from __future__ import annotations

import asyncio
import logging
import struct
import time
from dataclasses import dataclass

from ..entries import EncodingError
from ..wire import FRAME_TYPES, MAX_FRAME, frame

log = logging.getLogger(__name__)


class FrameTooLarge(EncodingError):
    pass


async def read_frame(reader: asyncio.StreamReader, max_size: int = MAX_FRAME) -> tuple[int, bytes] | None:
    """Read one frame; None on clean EOF.

    A frame with an unknown type is consumed whole and reported as type -1 so
    callers can drop it without losing stream alignment.  An oversized length
    prefix cannot be skipped safely and raises.
    """
    try:
        header = await reader.readexactly(4)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            return None
        raise
    (length,) = struct.unpack(">I", header)
    if length < 1 or length > max_size:
        raise FrameTooLarge(f"frame length {length} out of range")
    data = await reader.readexactly(length)
    kind = data[0]
    if kind not in FRAME_TYPES:
        return -1, b""
    return kind, data[1:]


async def write_frame(writer: asyncio.StreamWriter, kind: int, body: bytes) -> None:
    writer.write(frame(kind, body))
    await writer.drain()


@dataclass
class LinkStats:
    frames_sent: int = 0
    bytes_sent: int = 0
    frames_dropped: int = 0
    reconnects: int = 0


class PeerLink:
    """Persistent outbound connection to one peer.

    Frames are queued and written in order by a background task.  With link
    emulation each frame first occupies the link for ``size * 8 / bandwidth``
    seconds, then arrives ``latency`` later; the writer holds it back until
    then.  If the peer is unreachable, queued frames are dropped, which the
    protocol treats like a silent peer.
    """

    def __init__(self, host: str, port: int, latency_ms: float = 0.0, bandwidth: float = 0.0,
                 connect_timeout: float = 1.0, retry_delay: float = 0.05):
        self.host = host
        self.port = port
        self.latency = latency_ms / 1000
        self.bandwidth = bandwidth
        self.connect_timeout = connect_timeout
        self.retry_delay = retry_delay
        self.stats = LinkStats()
        self._queue: asyncio.Queue[tuple[float, bytes]] = asyncio.Queue()
        self._link_free = 0.0
        self._writer: asyncio.StreamWriter | None = None
        self._task: asyncio.Task | None = None
        self._next_attempt = 0.0

    def start(self) -> None:
        if self._task is None:
            self._task = asyncio.get_running_loop().create_task(self._run())

    def send(self, data: bytes) -> None:
        """Queue an encoded frame for delivery."""
        now = time.monotonic()
        at = now
        if self.bandwidth > 0:
            start = max(now, self._link_free)
            self._link_free = start + len(data) * 8 / self.bandwidth
            at = self._link_free
        self._queue.put_nowait((at + self.latency, data))

    async def _connect(self) -> asyncio.StreamWriter | None:
        if self._writer is not None and not self._writer.is_closing():
            return self._writer
        if time.monotonic() < self._next_attempt:
            return None
        try:
            _, writer = await asyncio.wait_for(
                asyncio.open_connection(self.host, self.port), self.connect_timeout
            )
        except (OSError, asyncio.TimeoutError) as exc:
            self._next_attempt = time.monotonic() + self.retry_delay
            log.debug("peer %s:%d unreachable: %s", self.host, self.port, exc)
            return None
        self.stats.reconnects += 1
        self._writer = writer
        return writer

    async def _run(self) -> None:
        while True:
            deliver_at, data = await self._queue.get()
            delay = deliver_at - time.monotonic()
            if delay > 0:
                await asyncio.sleep(delay)
            writer = await self._connect()
            if writer is None:
                self.stats.frames_dropped += 1
                continue
            try:
                writer.write(data)
                await writer.drain()
            except (OSError, ConnectionError) as exc:
                log.debug("peer %s:%d write failed: %s", self.host, self.port, exc)
                self.stats.frames_dropped += 1
                self._writer = None
                writer.close()
                continue
            self.stats.frames_sent += 1
            self.stats.bytes_sent += len(data)

    async def close(self) -> None:
        if self._task is not None:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass
            self._task = None
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except (OSError, ConnectionError):
                pass
            self._writer = None
