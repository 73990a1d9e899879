"""One node's view of a protocol epoch: collection, replication, signing.

Every operation takes a :class:`NodeState` and returns a new one; nothing is
mutated in place, so the simulator can branch on states freely and the
networked runtime just keeps the latest value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping

from .crypto import KeyPair, NodeId, PublicRegistry, Signature, log_sig_payload, sign, verify
from .entries import DEFAULT_MAX_ENTRY_SIZE, EMPTY, EntrySet, union
from .log import GENESIS, Log, LogCertificate, mk_digest, mk_log
from .replicate import (
    CORRECT,
    ReplicateMsg,
    ThreadState,
    Variant,
    thread_decide,
    thread_init,
    thread_next,
    thread_send,
)
from .wire import LogSigMsg

log = logging.getLogger(__name__)

Bundle = tuple[ReplicateMsg, ...]


class Phase(str, Enum):
    COLLECTION = "collection"
    REPLICATION = "replication"
    SIGNING = "signing"
    PUBLISHED = "published"


class PhaseError(RuntimeError):
    pass


class EntryRejected(ValueError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class NodeConfig:
    node: NodeId
    n: int
    f: int
    rounds: int | None = None  # replication rounds; None means f+1
    max_entry_size: int = DEFAULT_MAX_ENTRY_SIZE
    variant: Variant = CORRECT

    @property
    def replication_rounds(self) -> int:
        return self.f + 1 if self.rounds is None else self.rounds

    @property
    def quorum(self) -> int:
        return self.f + 1


@dataclass(frozen=True)
class NodeState:
    cfg: NodeConfig
    log: Log = GENESIS
    entries: EntrySet = EMPTY
    phase: Phase = Phase.COLLECTION
    round: int = 0
    threads: Mapping[NodeId, ThreadState] = field(default_factory=dict)
    decisions: tuple[EntrySet, ...] | None = None
    prev_log: Log | None = None
    digest: bytes | None = None
    sigs: tuple[Signature, ...] = ()
    certificate: LogCertificate | None = None

    @property
    def node(self) -> NodeId:
        return self.cfg.node

    @property
    def epoch(self) -> int:
        """Epoch of the log under construction."""
        if self.phase in (Phase.SIGNING, Phase.PUBLISHED) and self.prev_log is not None:
            return self.log.epoch
        return self.log.epoch + 1

    @property
    def decided(self) -> EntrySet:
        return union(*self.decisions) if self.decisions else EMPTY


def initial_state(cfg: NodeConfig, entries: EntrySet = EMPTY, log: Log = GENESIS) -> NodeState:
    return NodeState(cfg, log=log, entries=entries)


def _expect(state: NodeState, *phases: Phase) -> None:
    if state.phase not in phases:
        raise PhaseError(f"node {state.node}: operation needs {phases}, node is in {state.phase}")


def collect(state: NodeState, request: bytes) -> NodeState:
    """Add a client entry; duplicates (pending or already logged) are no-ops."""
    _expect(state, Phase.COLLECTION)
    if not request:
        raise EntryRejected("empty entry")
    if len(request) > state.cfg.max_entry_size:
        raise EntryRejected(f"entry of {len(request)} bytes exceeds {state.cfg.max_entry_size}")
    if request in state.log or request in state.entries:
        return state
    return replace(state, entries=union(state.entries, (request,)))


def begin_replication(state: NodeState) -> NodeState:
    _expect(state, Phase.COLLECTION)
    rounds = state.cfg.replication_rounds
    threads = {
        p: thread_init(state.node, p, state.entries, rounds=rounds) for p in range(state.cfg.n)
    }
    return replace(state, phase=Phase.REPLICATION, round=1, threads=threads)


def replication_send(state: NodeState, kp: KeyPair) -> dict[NodeId, Bundle]:
    """This round's outbox: one bundle per recipient covering all threads."""
    _expect(state, Phase.REPLICATION)
    recipients = range(state.cfg.n)
    outbox: dict[NodeId, list[ReplicateMsg]] = {}
    for p in sorted(state.threads):
        sent = thread_send(
            state.threads[p], state.round, kp, recipients,
            epoch=state.epoch, variant=state.cfg.variant,
        )
        for j, msg in sent.items():
            outbox.setdefault(j, []).append(msg)
    return {j: tuple(msgs) for j, msgs in sorted(outbox.items())}


def replication_next(
    state: NodeState,
    inbox: Mapping[NodeId, Iterable[ReplicateMsg]],
    reg: PublicRegistry,
) -> NodeState:
    """Route the round's messages to their threads and advance every thread.

    ``inbox`` maps each sender heard from to the bundle it delivered.  After the
    last replication round the per-thread decisions are fixed and the node
    moves to the signing phase.
    """
    _expect(state, Phase.REPLICATION)
    r = state.round
    per_thread: dict[NodeId, list[ReplicateMsg]] = {p: [] for p in state.threads}
    for sender, bundle in sorted(inbox.items()):
        seen: set[int] = set()
        for msg in bundle:
            if msg.sender != sender or msg.epoch != state.epoch or msg.round != r:
                log.debug("node %d: dropped message %s/%s/%s from %d",
                          state.node, msg.sender, msg.epoch, msg.round, sender)
                continue
            if msg.primary not in per_thread or msg.primary in seen:
                log.debug("node %d: dropped message for primary %s from %d",
                          state.node, msg.primary, sender)
                continue
            seen.add(msg.primary)
            per_thread[msg.primary].append(msg)
    threads = {
        p: thread_next(t, r, per_thread[p], reg, state.cfg.variant)
        for p, t in state.threads.items()
    }
    if r < state.cfg.replication_rounds:
        return replace(state, threads=threads, round=r + 1)
    decisions = tuple(thread_decide(threads[p]) for p in sorted(threads))
    return replace(state, threads=threads, round=0, phase=Phase.SIGNING, decisions=decisions)


def signing_send(state: NodeState, kp: KeyPair, now: int, period: int) -> tuple[NodeState, LogSigMsg]:
    """Build the candidate log from the agreed entries and sign its digest."""
    _expect(state, Phase.SIGNING)
    if state.digest is not None:
        raise PhaseError(f"node {state.node}: already signed this epoch")
    candidate = mk_log(state.log, state.decided, period, now)
    h = mk_digest(candidate)
    own = sign(kp, log_sig_payload(h))
    new = replace(state, prev_log=state.log, log=candidate, digest=h, sigs=(own,))
    return new, LogSigMsg(state.node, candidate.epoch, h, own)


def signing_next(
    state: NodeState,
    inbox: Iterable[LogSigMsg | Signature],
    reg: PublicRegistry,
) -> tuple[NodeState, LogCertificate | None]:
    """Collect valid signatures over our own digest; publish at f+1 signers.

    May be called repeatedly while the signing round is open; extra valid
    signatures beyond the quorum are kept in the certificate.
    """
    _expect(state, Phase.SIGNING, Phase.PUBLISHED)
    if state.digest is None:
        raise PhaseError(f"node {state.node}: signing_next before signing_send")
    payload = log_sig_payload(state.digest)
    have = {s.signer: s for s in state.sigs}
    for item in inbox:
        if isinstance(item, LogSigMsg):
            if item.epoch != state.log.epoch or item.digest != state.digest:
                continue
            s = item.signature
            if s.signer != item.sender:
                continue
        else:
            s = item
        if s.signer in have:
            continue
        if verify(reg, s, payload):
            have[s.signer] = s
    sigs = tuple(have[k] for k in sorted(have))
    if len(sigs) < state.cfg.quorum:
        return replace(state, sigs=sigs), None
    cert = LogCertificate(state.log, sigs)
    return replace(state, sigs=sigs, certificate=cert, phase=Phase.PUBLISHED), cert


def finish_epoch(state: NodeState) -> NodeState:
    """Close the epoch and return a fresh collection-phase state.

    Without a certificate the node rolls back to the previous log and keeps its
    collected entries for the next attempt.
    """
    if state.phase is Phase.PUBLISHED:
        base = state.log
        remaining = tuple(e for e in state.entries if e not in base)
    else:
        if state.phase is Phase.SIGNING:
            log.warning("node %d: epoch %d closed with %d/%d signatures",
                        state.node, state.epoch, len(state.sigs), state.cfg.quorum)
        base = state.prev_log if state.prev_log is not None else state.log
        remaining = state.entries
    return NodeState(state.cfg, log=base, entries=remaining)
