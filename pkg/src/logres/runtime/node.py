"""Networked node: drives the protocol state machine on a wall-clock schedule.

Time is divided into slots of ``period`` ms starting at ``origin``.  Each slot
is one epoch: a collection window, f+1 replication rounds and one signing
round, each of ``round_length`` ms, ending exactly at the slot boundary.
Messages for a round that arrive after its deadline are not heard.

All state changes happen in one task that consumes a queue of inbound events
and wakes up at round deadlines; connection handlers only decode frames and
enqueue them.
"""

from __future__ import annotations

import asyncio
import hashlib
import logging
import math
import os
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from ..crypto import sign
from ..entries import EMPTY, EncodingError, decode_entry_set, encode_entry_set, entry_set
from ..log import LogCertificate, decode_certificate, encode_certificate, mk_digest, validate_certificate
from ..node import (
    NodeConfig,
    NodeState,
    Phase,
    begin_replication,
    collect,
    finish_epoch,
    initial_state,
    replication_next,
    replication_send,
    signing_next,
    signing_send,
)
from ..replicate import ReplicateMsg, WitnessedValue
from ..wire import (
    ACK_ACCEPTED,
    ACK_DUPLICATE,
    ACK_REJECTED,
    FRAME_CERT,
    FRAME_GET_CERT,
    FRAME_LOG_SIG,
    FRAME_REPLICATION,
    FRAME_SUBMIT,
    FRAME_SUBMIT_ACK,
    LogSigMsg,
    decode_bundle,
    decode_log_sig,
    encode_ack,
    encode_bundle,
    encode_log_sig,
    frame,
)
from . import client
from .config import Deployment
from .transport import FrameTooLarge, PeerLink, read_frame, write_frame

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Slot:
    index: int
    start: float  # seconds since the Unix epoch
    period: float
    round_length: float
    rounds: int  # replication rounds

    @property
    def collect_end(self) -> float:
        return self.start + self.period - (self.rounds + 1) * self.round_length

    def round_end(self, r: int) -> float:
        return self.collect_end + r * self.round_length

    @property
    def end(self) -> float:
        return self.start + self.period


@dataclass
class Metrics:
    epochs_published: int = 0
    epochs_failed: int = 0
    entries_logged: int = 0
    submissions: int = 0
    duplicates: int = 0
    rejected: int = 0
    frames_in: int = 0
    bytes_in: int = 0
    late_messages: int = 0
    bad_frames: int = 0
    catch_ups: int = 0
    last_publish_delay_ms: float | None = None
    request_latencies_ms: deque = field(default_factory=lambda: deque(maxlen=10_000))


@dataclass(frozen=True)
class Publication:
    epoch: int
    digest: bytes
    at: float  # wall-clock publication time
    slot: int
    entries: int


class NodeRuntime:
    def __init__(self, dep: Deployment, *, clock: Callable[[], float] = time.time):
        self.dep = dep
        self.registry = dep.registry()
        self.keypair = dep.keypair()
        self.cfg = NodeConfig(dep.self_id, dep.n, dep.f, max_entry_size=dep.max_entry_size)
        self.clock = clock
        self.state: NodeState = initial_state(self.cfg)
        self.certificate: LogCertificate | None = None
        self.metrics = Metrics()
        self.publications: list[Publication] = []
        self.on_publish: list[Callable[[LogCertificate, Publication], None]] = []
        self.slot: Slot | None = None
        self._events: asyncio.Queue = asyncio.Queue()
        self._backlog: dict[bytes, None] = {}
        self._received_at: dict[bytes, float] = {}
        self._rep_inbox: dict[int, dict[int, tuple[ReplicateMsg, ...]]] = {}
        self._early_sigs: list[LogSigMsg] = []
        self._closed_round = 0
        self._needs_catch_up = True
        self._links: dict[int, PeerLink] = {}
        self._server: asyncio.base_events.Server | None = None
        self._http = None
        self._tasks: list[asyncio.Task] = []
        self._stopping = False
        self._data_dir = dep.resolved_data_dir()
        self._load_snapshot()

    @property
    def node(self) -> int:
        return self.dep.self_id

    # lifecycle

    async def start(self) -> None:
        me = self.dep.me.address
        self._server = await asyncio.start_server(self._handle_connection, me.host, me.port)
        for m in self.dep.members:
            if m.node == self.node:
                continue
            link = PeerLink(m.address.host, m.address.port, self.dep.link_latency, self.dep.bandwidth)
            link.start()
            self._links[m.node] = link
        if self.dep.http is not None:
            await self._start_http()
        log.info("node %d listening on %s", self.node, me)

    async def run(self) -> None:
        """Run epochs until :meth:`stop` is called."""
        if self._server is None:
            await self.start()
        try:
            while not self._stopping:
                await self.run_epoch(self.next_slot())
        finally:
            await self.close()

    def stop(self) -> None:
        self._stopping = True
        self._events.put_nowait(("wake",))

    async def close(self) -> None:
        self._stopping = True
        if self._http is not None:
            self._http.should_exit = True
        for t in self._tasks:
            try:
                await asyncio.wait_for(t, 2.0)
            except (asyncio.TimeoutError, asyncio.CancelledError):
                t.cancel()
        self._tasks.clear()
        for link in self._links.values():
            await link.close()
        self._links.clear()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None

    async def _start_http(self) -> None:
        import uvicorn

        from ..service.app import create_app

        addr = self.dep.http
        config = uvicorn.Config(create_app(self), host=addr.host, port=addr.port,
                                log_level="warning", lifespan="off")
        self._http = uvicorn.Server(config)
        self._tasks.append(asyncio.get_running_loop().create_task(self._http.serve()))

    # schedule

    def slot_at(self, index: int) -> Slot:
        d = self.dep
        return Slot(index, (d.origin + index * d.period) / 1000, d.period / 1000,
                    d.round_length / 1000, self.cfg.replication_rounds)

    def next_slot(self) -> Slot:
        """The current slot if its collection window is still open, else the next one."""
        now_ms = self.clock() * 1000
        k = math.floor((now_ms - self.dep.origin) / self.dep.period)
        slot = self.slot_at(k)
        if self.slot is not None and k <= self.slot.index:
            slot = self.slot_at(self.slot.index + 1)
        elif self.clock() >= slot.collect_end:
            slot = self.slot_at(k + 1)
        return slot

    async def _pump(self, deadline: float) -> None:
        """Handle inbound events until the wall clock reaches ``deadline``."""
        while not self._stopping:
            timeout = deadline - self.clock()
            if timeout <= 0:
                return
            try:
                event = await asyncio.wait_for(self._events.get(), timeout)
            except asyncio.TimeoutError:
                return
            self._handle_event(event)
        # drain without blocking so pending submits still get answered
        while not self._events.empty():
            self._handle_event(self._events.get_nowait())

    # epoch

    async def run_epoch(self, slot: Slot) -> None:
        self.slot = slot
        self._closed_round = 0
        await self._pump(slot.start)
        if self._stopping:
            return
        if self._needs_catch_up:
            await self.catch_up()
        self._drain_backlog()
        await self._pump(slot.collect_end)
        if self._stopping:
            return
        self.state = begin_replication(self.state)
        rounds = self.cfg.replication_rounds
        for r in range(1, rounds + 1):
            outbox = replication_send(self.state, self.keypair)
            if self.dep.behaviour == "padding" and r >= 2:
                outbox = self._pad(outbox, r)
            for j, bundle in outbox.items():
                if bundle and j != self.node:
                    self._send(j, frame(FRAME_REPLICATION, encode_bundle(bundle)))
            await self._pump(slot.round_end(r))
            self._closed_round = r
            inbox = self._rep_inbox.pop(r, {})
            self.state = replication_next(self.state, inbox, self.registry)
        self.state, msg = signing_send(self.state, self.keypair, int(round(slot.end * 1000)), self.dep.period)
        data = frame(FRAME_LOG_SIG, encode_log_sig(msg))
        for j in self._links:
            self._send(j, data)
        early, self._early_sigs = self._early_sigs, []
        self._apply_sigs(early)
        await self._pump(slot.end)
        self._closed_round = rounds + 1
        self._close_epoch()

    def _close_epoch(self) -> None:
        st = self.state
        if st.phase is Phase.PUBLISHED:
            self.certificate = LogCertificate(st.log, st.sigs)
            self.metrics.epochs_published += 1
        else:
            self.metrics.epochs_failed += 1
            self._needs_catch_up = True
            log.warning("node %d: slot %d ended without a certificate (%d/%d signatures)",
                        self.node, self.slot.index if self.slot else -1, len(st.sigs), self.cfg.quorum)
        self.state = finish_epoch(st)
        self._rep_inbox.clear()
        self._early_sigs.clear()
        self._save_snapshot()

    def _apply_sigs(self, msgs: list[LogSigMsg]) -> None:
        if not msgs or self.state.phase not in (Phase.SIGNING, Phase.PUBLISHED):
            return
        was_published = self.state.phase is Phase.PUBLISHED
        self.state, cert = signing_next(self.state, msgs, self.registry)
        if cert is not None and not was_published:
            self._publish(cert)

    def _publish(self, cert: LogCertificate) -> None:
        now = self.clock()
        self.certificate = cert
        self.metrics.entries_logged = len(cert.log.entries)
        if self.slot is not None:
            self.metrics.last_publish_delay_ms = (now - self.slot.collect_end) * 1000
        for e in self.state.decided:
            t = self._received_at.pop(e, None)
            if t is not None:
                self.metrics.request_latencies_ms.append((now - t) * 1000)
        pub = Publication(cert.log.epoch, mk_digest(cert.log), now,
                          self.slot.index if self.slot else -1, len(cert.log.entries))
        self.publications.append(pub)
        log.info("node %d: published epoch %d with %d entries (%d signatures)",
                 self.node, cert.log.epoch, len(cert.log.entries), len(cert.sigs))
        for callback in self.on_publish:
            callback(cert, pub)

    def _pad(self, outbox, r: int):
        """Add self-signed junk values to every thread; receivers discard them."""
        own = self.state.threads[self.node].input or (b"pad",)
        junk = tuple(sorted(b"~pad:" + hashlib.sha256(e + bytes([r])).digest() for e in own))
        out = {}
        for j in range(self.dep.n):
            if j == self.node:
                continue
            bundle = {m.primary: m for m in outbox.get(j, ())}
            for p in range(self.dep.n):
                payload = self.cfg.variant.payload(junk, p)
                wv = WitnessedValue(junk, p, (sign(self.keypair, payload),))
                m = bundle.get(p)
                values = (m.values if m else ()) + (wv,)
                bundle[p] = ReplicateMsg(self.node, self.state.epoch, r, p, values)
            out[j] = tuple(bundle[p] for p in sorted(bundle))
        return out

    def _send(self, j: int, data: bytes) -> None:
        link = self._links.get(j)
        if link is not None:
            link.send(data)

    # catch-up and persistence

    async def catch_up(self) -> None:
        """Adopt the newest valid certificate any peer holds, if it is ahead of ours."""
        self._needs_catch_up = False
        timeout = max(0.05, min(1.0, self.dep.round_length / 1000))
        peers = [m.address for m in self.dep.members if m.node != self.node]
        results = await asyncio.gather(*(client.get_certificate(a, timeout) for a in peers),
                                       return_exceptions=True)
        best = None
        now_ms = int(self.clock() * 1000)
        for cert in results:
            if not isinstance(cert, LogCertificate):
                continue
            if cert.log.epoch <= self.state.log.epoch:
                continue
            if not validate_certificate(cert, self.registry, now_ms):
                continue
            if best is None or cert.log.epoch > best.log.epoch:
                best = cert
        if best is None:
            return
        self.metrics.catch_ups += 1
        log.info("node %d: caught up from epoch %d to %d", self.node, self.state.log.epoch, best.log.epoch)
        pending = tuple(e for e in self.state.entries if e not in best.log)
        self.state = NodeState(self.cfg, log=best.log, entries=pending)
        self.certificate = best

    def _load_snapshot(self) -> None:
        if self._data_dir is None:
            return
        cert_path = self._data_dir / "latest.cert"
        pending_path = self._data_dir / "pending.entries"
        base = self.state.log
        if cert_path.exists():
            try:
                cert = decode_certificate(cert_path.read_bytes())
            except EncodingError as exc:
                log.warning("node %d: ignoring unreadable %s: %s", self.node, cert_path, exc)
            else:
                # expiry does not matter for local history, only the signatures
                if validate_certificate(cert, self.registry, cert.log.expiration - 1):
                    self.certificate = cert
                    base = cert.log
        entries = EMPTY
        if pending_path.exists():
            try:
                entries, _ = decode_entry_set(pending_path.read_bytes())
            except EncodingError as exc:
                log.warning("node %d: ignoring unreadable %s: %s", self.node, pending_path, exc)
        entries = tuple(e for e in entries if e not in base)
        self.state = initial_state(self.cfg, entries, base)

    def _save_snapshot(self) -> None:
        if self._data_dir is None:
            return
        self._data_dir.mkdir(parents=True, exist_ok=True)
        pending = entry_set(list(self.state.entries) + list(self._backlog))
        _atomic_write(self._data_dir / "pending.entries", encode_entry_set(pending))
        if self.certificate is not None:
            _atomic_write(self._data_dir / "latest.cert", encode_certificate(self.certificate))

    # inbound events

    def _handle_event(self, event: tuple) -> None:
        kind = event[0]
        if kind == "submit":
            _, entry, fut = event
            status, reason = self.submit_entry(entry)
            if not fut.done():
                fut.set_result((status, reason))
        elif kind == "replicate":
            self._on_replicate(event[1])
        elif kind == "sig":
            self._on_sig(event[1])

    def submit_entry(self, entry: bytes) -> tuple[int, str]:
        """Accept a client entry into this or the next collection window."""
        self.metrics.submissions += 1
        if not entry:
            self.metrics.rejected += 1
            return ACK_REJECTED, "empty entry"
        if len(entry) > self.cfg.max_entry_size:
            self.metrics.rejected += 1
            return ACK_REJECTED, f"entry of {len(entry)} bytes exceeds {self.cfg.max_entry_size}"
        st = self.state
        if entry in st.log or entry in self._backlog or entry in st.entries:
            self.metrics.duplicates += 1
            return ACK_DUPLICATE, ""
        self._received_at[entry] = self.clock()
        self._backlog[entry] = None
        if st.phase is Phase.COLLECTION and self._closed_round == 0:
            self._drain_backlog()
        return ACK_ACCEPTED, ""

    def _drain_backlog(self) -> None:
        if not self._backlog or self.state.phase is not Phase.COLLECTION:
            return
        for e in self._backlog:
            self.state = collect(self.state, e)
        self._backlog.clear()

    def _on_replicate(self, msgs: tuple[ReplicateMsg, ...]) -> None:
        if not msgs:
            return
        sender = msgs[0].sender
        if any(m.sender != sender for m in msgs) or sender == self.node:
            self.metrics.bad_frames += 1
            return
        epoch, r = msgs[0].epoch, msgs[0].round
        if any(m.epoch != epoch or m.round != r for m in msgs):
            self.metrics.bad_frames += 1
            return
        if epoch > self.state.epoch:
            self._needs_catch_up = True
            return
        if epoch < self.state.epoch or r <= self._closed_round:
            self.metrics.late_messages += 1
            return
        self._rep_inbox.setdefault(r, {}).setdefault(sender, msgs)

    def _on_sig(self, msg: LogSigMsg) -> None:
        if msg.epoch > self.state.epoch:
            self._needs_catch_up = True
            return
        if msg.epoch < self.state.epoch or self._closed_round > self.cfg.replication_rounds:
            self.metrics.late_messages += 1
            return
        if self.state.phase in (Phase.SIGNING, Phase.PUBLISHED):
            self._apply_sigs([msg])
        else:
            self._early_sigs.append(msg)

    async def _handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            while True:
                got = await read_frame(reader)
                if got is None:
                    return
                kind, body = got
                self.metrics.frames_in += 1
                self.metrics.bytes_in += len(body) + 5
                try:
                    if kind == FRAME_REPLICATION:
                        self._events.put_nowait(("replicate", decode_bundle(body)))
                    elif kind == FRAME_LOG_SIG:
                        self._events.put_nowait(("sig", decode_log_sig(body)))
                    elif kind == FRAME_SUBMIT:
                        status, reason = await self.submit_async(body)
                        await write_frame(writer, FRAME_SUBMIT_ACK, encode_ack(status, reason))
                    elif kind == FRAME_GET_CERT:
                        body = encode_certificate(self.certificate) if self.certificate else b""
                        await write_frame(writer, FRAME_CERT, body)
                    else:
                        self.metrics.bad_frames += 1
                except EncodingError as exc:
                    self.metrics.bad_frames += 1
                    log.debug("node %d: dropped malformed frame: %s", self.node, exc)
        except (FrameTooLarge, asyncio.IncompleteReadError, ConnectionError, OSError):
            pass
        finally:
            writer.close()

    async def submit_async(self, entry: bytes) -> tuple[int, str]:
        fut = asyncio.get_running_loop().create_future()
        self._events.put_nowait(("submit", entry, fut))
        return await fut

    # introspection for the HTTP API and benchmarks

    def status(self) -> dict:
        st = self.state
        return {
            "node": self.node,
            "n": self.dep.n,
            "f": self.dep.f,
            "phase": st.phase.value,
            "slot": self.slot.index if self.slot else None,
            "log_epoch": st.log.epoch,
            "pending_entries": len(st.entries) + len(self._backlog),
            "certified_epoch": self.certificate.log.epoch if self.certificate else None,
        }


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
