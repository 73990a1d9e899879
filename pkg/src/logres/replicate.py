"""The replication subroutine, one pure state machine per (node, primary) pair.

The primary signs and broadcasts its input in round 1 and is done.  Responders
run ``rounds`` (= f+1) rounds: in round ``r`` they accept values carrying the
primary's signature and at least ``r`` valid witness signatures, decide on the
only value seen so far (or on the empty set once two values were seen), and
forward every newly accepted value with their own signature added.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable

from .crypto import (
    KeyPair,
    NodeId,
    PublicRegistry,
    Signature,
    sign,
    unbound_vote_payload,
    verify,
    vote_payload,
)
from .entries import EMPTY, EntrySet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Variant:
    """Protocol knobs.  The defaults are the correct protocol.

    ``bind_primary=False`` drops the primary from the vote payload and
    ``early_return=True`` lets a responder leave the thread as soon as its
    decision looks stable.  Both exist only to reproduce known flaws.
    """

    bind_primary: bool = True
    early_return: bool = False

    def payload(self, x: EntrySet, p: NodeId) -> bytes:
        return vote_payload(x, p) if self.bind_primary else unbound_vote_payload(x, p)

    @property
    def is_fixed(self) -> bool:
        return self.bind_primary and not self.early_return


CORRECT = Variant()


@dataclass(frozen=True)
class WitnessedValue:
    """A value from ``primary``'s thread together with its witnesses' signatures."""

    value: EntrySet
    primary: NodeId
    sigs: tuple[Signature, ...]

    def __post_init__(self):
        by_signer: dict[int, Signature] = {}
        for s in self.sigs:
            by_signer.setdefault(s.signer, s)
        object.__setattr__(self, "sigs", tuple(by_signer[k] for k in sorted(by_signer)))

    @property
    def witnesses(self) -> frozenset[NodeId]:
        return frozenset(s.signer for s in self.sigs)

    def with_signature(self, s: Signature) -> "WitnessedValue":
        return WitnessedValue(self.value, self.primary, self.sigs + (s,))


@dataclass(frozen=True)
class ReplicateMsg:
    sender: NodeId
    epoch: int
    round: int
    primary: NodeId
    values: tuple[WitnessedValue, ...]


class Role(str, Enum):
    PRIMARY = "primary"
    RESPONDER = "responder"


@dataclass(frozen=True)
class ThreadState:
    node: NodeId
    primary: NodeId
    role: Role
    input: EntrySet
    rounds: int
    decision: EntrySet = EMPTY
    witnessed: frozenset[EntrySet] = frozenset()
    round_votes: tuple[WitnessedValue, ...] = ()
    # accepted-but-not-yet-forwarded values; own signature is added on send
    pending: tuple[WitnessedValue, ...] = ()
    rounds_done: int = 0
    exited: bool = field(default=False)


class PrematureDecision(RuntimeError):
    pass


def thread_init(i: NodeId, p: NodeId, x: EntrySet, *, rounds: int) -> ThreadState:
    if i == p:
        return ThreadState(i, p, Role.PRIMARY, x, rounds)
    return ThreadState(i, p, Role.RESPONDER, EMPTY, rounds)


def thread_send(
    state: ThreadState,
    r: int,
    signer: KeyPair,
    recipients: Iterable[NodeId],
    *,
    epoch: int = 0,
    variant: Variant = CORRECT,
) -> dict[NodeId, ReplicateMsg]:
    """Messages this thread sends in round ``r``, keyed by recipient."""
    if state.role is Role.PRIMARY:
        if r != 1:
            return {}
        vote = sign(signer, variant.payload(state.input, state.primary))
        values = (WitnessedValue(state.input, state.primary, (vote,)),)
        targets = [j for j in recipients if j != state.node]
    else:
        if not state.pending or state.exited:
            return {}
        values = tuple(
            wv.with_signature(sign(signer, variant.payload(wv.value, wv.primary)))
            for wv in state.pending
        )
        targets = [j for j in recipients if j not in (state.node, state.primary)]
    msg = ReplicateMsg(state.node, epoch, r, state.primary, values)
    return {j: msg for j in targets}


def accepted_votes(
    state: ThreadState,
    r: int,
    inbox: Iterable[ReplicateMsg],
    reg: PublicRegistry,
    variant: Variant = CORRECT,
) -> tuple[WitnessedValue, ...]:
    """Values from ``inbox`` signed by the primary and by at least ``r`` valid witnesses.

    Witness sets for the same value are merged; invalid signatures are ignored.
    """
    p = state.primary
    merged: dict[EntrySet, dict[NodeId, Signature]] = {}
    payloads: dict[EntrySet, bytes] = {}
    checked: dict[tuple[int, bytes, EntrySet], bool] = {}
    seen_senders: set[int] = set()
    for msg in inbox:
        if msg.primary != p:
            continue
        if msg.sender in seen_senders:
            log.debug("node %d thread %d: second message from %d dropped", state.node, p, msg.sender)
            continue
        seen_senders.add(msg.sender)
        for wv in msg.values:
            if wv.primary != p:
                continue
            payload = payloads.get(wv.value)
            if payload is None:
                payload = payloads[wv.value] = variant.payload(wv.value, p)
            slot = merged.setdefault(wv.value, {})
            for s in wv.sigs:
                if s.signer in slot:
                    continue
                key = (s.signer, s.data, wv.value)
                ok = checked.get(key)
                if ok is None:
                    ok = checked[key] = verify(reg, s, payload)
                if ok:
                    slot[s.signer] = s
    return tuple(
        WitnessedValue(value, p, tuple(slot.values()))
        for value, slot in sorted(merged.items())
        if p in slot and len(slot) >= r
    )


def thread_next(
    state: ThreadState,
    r: int,
    inbox: Iterable[ReplicateMsg],
    reg: PublicRegistry,
    variant: Variant = CORRECT,
) -> ThreadState:
    if not 1 <= r <= state.rounds:
        raise ValueError(f"round {r} outside 1..{state.rounds}")
    if state.role is Role.PRIMARY or state.exited:
        return replace(state, rounds_done=r, pending=())

    votes = accepted_votes(state, r, inbox, reg, variant)
    current = frozenset(wv.value for wv in votes)
    new = current - state.witnessed
    decision, pending = state.decision, ()
    if new:
        seen = state.witnessed | current
        decision = next(iter(seen)) if len(seen) == 1 else EMPTY
        pending = tuple(wv for wv in votes if wv.value in new)
    exited = variant.early_return and not new and bool(state.witnessed)
    return replace(
        state,
        decision=decision,
        witnessed=state.witnessed | current,
        round_votes=votes,
        pending=pending,
        rounds_done=r,
        exited=exited,
    )


def thread_decide(state: ThreadState) -> EntrySet:
    if state.role is Role.PRIMARY:
        return state.input
    if state.rounds_done < state.rounds and not state.exited:
        raise PrematureDecision(
            f"thread {state.primary} on node {state.node}: decided after "
            f"{state.rounds_done} of {state.rounds} rounds"
        )
    return state.decision

