"""Lock-step Heard-Of executor with signature-closure enforcement.

Rounds are numbered from 0.  With ``R`` replication rounds (f+1 by default),
rounds ``0..R-1`` run the replication phase and round ``R`` the signing phase,
so every node passes through states ``s^0 .. s^(R+1)``.  Client collection is
folded into the initial state: ``s^0.entries`` holds what each node collected.

Correct nodes send what their state machine prescribes.  Faulty nodes are
simulated "in the shadow" as if honest (their prescribed messages are handed to
the adversary as a convenience), but what they actually deliver is decided by
the adversary, subject to :func:`closure_check`.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Protocol

from ..crypto import (
    KeyPair,
    NodeId,
    PublicRegistry,
    Signature,
    generate_keys,
    log_sig_payload,
    sign,
)
from ..entries import EMPTY, EntrySet
from ..log import LogCertificate
from ..node import (
    NodeConfig,
    NodeState,
    begin_replication,
    initial_state,
    replication_next,
    replication_send,
    signing_next,
    signing_send,
)
from ..replicate import CORRECT, ReplicateMsg, Variant, WitnessedValue
from ..wire import LogSigMsg

DEFAULT_NOW = 1_700_000_000_000
DEFAULT_PERIOD = 60_000

Message = Any  # tuple[ReplicateMsg, ...] during replication, LogSigMsg while signing


class InvalidAdversary(RuntimeError):
    """An adversary tried to deliver a message outside the closure M_r."""


@dataclass(frozen=True)
class FaultConfig:
    n: int
    f: int
    faulty: frozenset[NodeId] = frozenset()
    mode: str = "strict"  # "strict": n > 2f, "weak": n > f
    rounds: int | None = None  # replication rounds, None means f+1
    inclusive: bool = True  # round-r signatures usable by the adversary in round r
    variant: Variant = CORRECT
    # (receiver, round) -> sender sets overriding the defaults SHO = Π∖F, HO = Π
    sho: Mapping[tuple[NodeId, int], frozenset[NodeId]] = field(default_factory=dict)
    ho: Mapping[tuple[NodeId, int], frozenset[NodeId]] = field(default_factory=dict)
    now: int = DEFAULT_NOW
    period: int = DEFAULT_PERIOD

    def __post_init__(self):
        object.__setattr__(self, "faulty", frozenset(self.faulty))
        if self.mode not in ("strict", "weak"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.n < 1 or self.f < 0:
            raise ValueError("need n >= 1 and f >= 0")
        if len(self.faulty) > self.f:
            raise ValueError(f"|F| = {len(self.faulty)} exceeds f = {self.f}")
        if not self.faulty <= set(range(self.n)):
            raise ValueError("faulty ids out of range")
        if self.mode == "strict" and not self.n > 2 * self.f:
            raise ValueError("strict mode needs n > 2f")
        if not self.n > self.f:
            raise ValueError("need n > f")
        if self.replication_rounds < 1:
            raise ValueError("need at least one replication round")
        for key, s in self.sho.items():
            if not s <= self.heard_of(*key):
                raise ValueError(f"SHO{key} must be a subset of HO{key}")

    @property
    def replication_rounds(self) -> int:
        return self.f + 1 if self.rounds is None else self.rounds

    @property
    def total_rounds(self) -> int:
        return self.replication_rounds + 1

    @property
    def nodes(self) -> range:
        return range(self.n)

    @property
    def correct(self) -> list[NodeId]:
        return [i for i in self.nodes if i not in self.faulty]

    def safe_heard_of(self, i: NodeId, r: int) -> frozenset[NodeId]:
        default = frozenset(j for j in self.nodes if j not in self.faulty)
        return self.sho.get((i, r), default)

    def heard_of(self, i: NodeId, r: int) -> frozenset[NodeId]:
        return self.ho.get((i, r), frozenset(self.nodes))

    def not_failed(self, r: int) -> frozenset[NodeId]:
        """C_r: processes contained in every safe heard-of set up to round ``r``."""
        alive = frozenset(self.nodes)
        for r2 in range(r + 1):
            for i in self.nodes:
                alive &= self.safe_heard_of(i, r2)
        return alive

    def node_config(self, i: NodeId) -> NodeConfig:
        return NodeConfig(i, self.n, self.f, rounds=self.rounds, variant=self.variant)


def signatures_in(msg: Message) -> Iterable[Signature]:
    if isinstance(msg, LogSigMsg):
        yield msg.signature
    elif isinstance(msg, ReplicateMsg):
        for wv in msg.values:
            yield from wv.sigs
    elif msg is not None:
        for m in msg:
            yield from signatures_in(m)


class SentLedger:
    """Everything sent so far, plus per-signer sets of emitted signatures (Σ)."""

    def __init__(self, variant: Variant = CORRECT):
        self.variant = variant
        self.sent: dict[tuple[NodeId, int], dict[NodeId, Message]] = {}
        self.emitted: dict[NodeId, dict[bytes, int]] = {}
        self.by_payload: dict[NodeId, dict[bytes, tuple[Signature, int]]] = {}

    def fork(self) -> "SentLedger":
        child = SentLedger(self.variant)
        child.sent = dict(self.sent)
        child.emitted = {k: dict(v) for k, v in self.emitted.items()}
        child.by_payload = {k: dict(v) for k, v in self.by_payload.items()}
        return child

    def record(self, sender: NodeId, r: int, outbox: Mapping[NodeId, Message]) -> None:
        slot = self.sent.setdefault((sender, r), {})
        slot.update(outbox)
        emitted = self.emitted.setdefault(sender, {})
        index = self.by_payload.setdefault(sender, {})
        for msg in outbox.values():
            for payload, s in self._own_signed(sender, msg):
                emitted.setdefault(s.data, r)
                index.setdefault(payload, (s, r))

    def _own_signed(self, sender: NodeId, msg: Message):
        if isinstance(msg, LogSigMsg):
            if msg.signature.signer == sender and len(msg.digest) == 32:
                yield log_sig_payload(msg.digest), msg.signature
            return
        for m in msg or ():
            for wv in m.values:
                for s in wv.sigs:
                    if s.signer == sender:
                        yield self.variant.payload(wv.value, wv.primary), s

    def sigma(self, i: NodeId, r: int, inclusive: bool = True) -> set[bytes]:
        """Signatures by ``i`` sent in rounds up to ``r``."""
        limit = r if inclusive else r - 1
        return {data for data, r0 in self.emitted.get(i, {}).items() if r0 <= limit}

    def has_emitted(self, s: Signature, r: int, inclusive: bool = True) -> bool:
        r0 = self.emitted.get(s.signer, {}).get(s.data)
        return r0 is not None and (r0 <= r if inclusive else r0 < r)

    def find(self, signer: NodeId, payload: bytes, r: int, inclusive: bool = True) -> Signature | None:
        hit = self.by_payload.get(signer, {}).get(payload)
        if hit is None:
            return None
        s, r0 = hit
        return s if (r0 <= r if inclusive else r0 < r) else None


def closure_check(msg: Message, r: int, ledger: SentLedger, cfg: FaultConfig) -> bool:
    """True iff ``msg`` lies in M_r: every signature attributed to a not-yet-failed
    process was actually sent by it no later than round ``r``."""
    alive = cfg.not_failed(r)
    for s in signatures_in(msg):
        if s.signer in alive and not ledger.has_emitted(s, r, cfg.inclusive):
            return False
    return True


@dataclass
class AdversaryView:
    """What an adversary may use in round ``round``."""

    round: int
    cfg: FaultConfig
    ledger: SentLedger
    keys: Mapping[NodeId, KeyPair]
    registry: PublicRegistry
    inputs: Mapping[NodeId, EntrySet]
    shadow_states: Mapping[NodeId, NodeState]
    shadow_outbox: Mapping[NodeId, Mapping[NodeId, Message]]
    # receiver -> senders whose message the adversary decides this round
    controlled: Mapping[NodeId, tuple[NodeId, ...]]
    rng: random.Random
    epoch: int = 1

    @property
    def signing(self) -> bool:
        return self.round == self.cfg.replication_rounds

    @property
    def replicate_round(self) -> int:
        return self.round + 1

    @property
    def faulty(self) -> list[NodeId]:
        return sorted(self.keys)

    def payload(self, value: EntrySet, primary: NodeId) -> bytes:
        return self.cfg.variant.payload(value, primary)

    def witness_sig(self, w: NodeId, value: EntrySet, primary: NodeId) -> Signature | None:
        payload = self.payload(value, primary)
        if w in self.keys:
            return sign(self.keys[w], payload)
        return self.ledger.find(w, payload, self.round, self.cfg.inclusive)

    def vote(self, value: EntrySet, primary: NodeId, witnesses: Iterable[NodeId]) -> WitnessedValue | None:
        """⟨value, primary⟩_W built from faulty keys and ledger signatures, if possible."""
        sigs = []
        for w in sorted(set(witnesses)):
            s = self.witness_sig(w, value, primary)
            if s is None:
                return None
            sigs.append(s)
        return WitnessedValue(value, primary, tuple(sigs))

    def replicate(self, sender: NodeId, primary: NodeId, values: Iterable[WitnessedValue]) -> ReplicateMsg:
        return ReplicateMsg(sender, self.epoch, self.replicate_round, primary, tuple(values))

    def honest(self, sender: NodeId, receiver: NodeId) -> Message:
        return self.shadow_outbox.get(sender, {}).get(receiver)

    def log_sig(self, sender: NodeId, digest: bytes) -> LogSigMsg:
        return LogSigMsg(sender, self.epoch, digest, sign(self.keys[sender], log_sig_payload(digest)))

    def correct_digests(self) -> list[bytes]:
        """Digests correct nodes broadcast in the signing round (empty before it)."""
        out = set()
        r = self.cfg.replication_rounds
        for i in self.cfg.correct:
            for msg in self.ledger.sent.get((i, r), {}).values():
                if isinstance(msg, LogSigMsg):
                    out.add(msg.digest)
        return sorted(out)


class Adversary(Protocol):
    name: str

    def messages(self, view: AdversaryView) -> Mapping[tuple[NodeId, NodeId], Message]:
        """Messages to deliver, keyed by (faulty sender, receiver); absent means ⊥."""
        ...


class Silent:
    """Faulty processes send nothing at all."""

    name = "silent"

    def messages(self, view):
        return {}


@dataclass
class Trace:
    cfg: FaultConfig
    adversary: str
    seed: int
    inputs: dict[NodeId, EntrySet]
    states: dict[NodeId, list[NodeState]]
    # round -> receiver -> sender -> delivered message
    delivered: list[dict[NodeId, dict[NodeId, Message]]]
    ledger: SentLedger
    certificates: dict[NodeId, LogCertificate]
    valid: bool = True
    invalid_reason: str | None = None

    def final(self, i: NodeId) -> NodeState:
        return self.states[i][-1]

    def state(self, i: NodeId, r: int) -> NodeState:
        return self.states[i][r]

    @property
    def complete(self) -> bool:
        return all(len(v) == self.cfg.total_rounds + 1 for v in self.states.values())

    def sent_count(self, r: int, senders: Iterable[NodeId] | None = None) -> int:
        """Number of (sender, receiver) messages prescribed in round ``r``."""
        senders = self.cfg.correct if senders is None else senders
        return sum(len(self.ledger.sent.get((i, r), {})) for i in senders)


@dataclass
class Snapshot:
    """Simulation state between rounds; used by run_lockstep and the search."""

    round: int
    states: dict[NodeId, NodeState]
    ledger: SentLedger


class Simulator:
    """Owns keys and configuration; advances :class:`Snapshot` objects one round at a time."""

    def __init__(self, cfg: FaultConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        key_seed = seed.to_bytes(32, "big", signed=False) if seed >= 0 else bytes(32)
        self.keys, self.registry = generate_keys(
            key_seed, cfg.n, cfg.f, scheme="hmac", strict=cfg.mode == "strict"
        )

    def initial(self, inputs: Mapping[NodeId, EntrySet]) -> Snapshot:
        states = {}
        for i in self.cfg.nodes:
            s = initial_state(self.cfg.node_config(i), inputs.get(i, EMPTY))
            states[i] = begin_replication(s)
        return Snapshot(0, states, SentLedger(self.cfg.variant))

    def prepare(self, snap: Snapshot) -> tuple[dict[NodeId, NodeState], dict[NodeId, dict[NodeId, Message]], SentLedger]:
        """Compute every node's prescribed outbox and record correct senders in a forked ledger."""
        r = snap.round
        sending = dict(snap.states)
        outbox: dict[NodeId, dict[NodeId, Message]] = {}
        for i, s in snap.states.items():
            if r < self.cfg.replication_rounds:
                outbox[i] = dict(replication_send(s, self.keys[i]))
            else:
                s2, msg = signing_send(s, self.keys[i], self.cfg.now, self.cfg.period)
                sending[i] = s2
                outbox[i] = {j: msg for j in self.cfg.nodes if j != i}
        ledger = snap.ledger.fork()
        for i in self.cfg.nodes:
            if i not in self.cfg.faulty:
                ledger.record(i, r, outbox[i])
        return sending, outbox, ledger

    def controlled(self, r: int) -> dict[NodeId, tuple[NodeId, ...]]:
        out = {}
        for i in self.cfg.nodes:
            if i in self.cfg.faulty:
                continue
            sho = self.cfg.safe_heard_of(i, r)
            ho = self.cfg.heard_of(i, r)
            out[i] = tuple(j for j in self.cfg.nodes if j != i and j in ho and j not in sho)
        return out

    def view(self, snap: Snapshot, sending, outbox, ledger, inputs, rng) -> AdversaryView:
        r = snap.round
        alive = self.cfg.not_failed(r)
        keys = {j: self.keys[j] for j in self.cfg.nodes if j not in alive}
        shadow = {j: sending[j] for j in self.cfg.faulty}
        return AdversaryView(
            round=r, cfg=self.cfg, ledger=ledger, keys=keys, registry=self.registry,
            inputs=inputs, shadow_states=shadow,
            shadow_outbox={j: outbox[j] for j in self.cfg.nodes if j not in alive},
            controlled=self.controlled(r), rng=rng,
        )

    def deliver(
        self,
        snap: Snapshot,
        sending: Mapping[NodeId, NodeState],
        outbox: Mapping[NodeId, Mapping[NodeId, Message]],
        ledger: SentLedger,
        forged: Mapping[tuple[NodeId, NodeId], Message],
    ) -> tuple[Snapshot, dict[NodeId, dict[NodeId, Message]]]:
        """Validate forged messages, build every μ_i^r, and apply the next-state functions."""
        r = snap.round
        controlled = self.controlled(r)
        for (j, i), msg in sorted(forged.items(), key=lambda kv: kv[0]):
            if msg is None:
                continue
            if j not in controlled.get(i, ()):
                raise InvalidAdversary(f"round {r}: adversary may not speak for {j} towards {i}")
            if not closure_check(msg, r, ledger, self.cfg):
                raise InvalidAdversary(f"round {r}: message {j}->{i} uses unsent signatures")
        by_sender: dict[NodeId, dict[NodeId, Message]] = {}
        for (j, i), msg in forged.items():
            if msg is not None:
                by_sender.setdefault(j, {})[i] = msg
        for j in sorted(by_sender):
            ledger.record(j, r, by_sender[j])

        delivered: dict[NodeId, dict[NodeId, Message]] = {}
        for i in self.cfg.nodes:
            mu: dict[NodeId, Message] = {}
            if i in self.cfg.faulty:
                for j in self.cfg.nodes:
                    m = outbox[j].get(i)
                    if m:
                        mu[j] = m
            else:
                sho = self.cfg.safe_heard_of(i, r)
                ho = self.cfg.heard_of(i, r)
                for j in self.cfg.nodes:
                    if j not in ho:
                        continue
                    m = outbox[j].get(i) if j in sho else forged.get((j, i))
                    if m:
                        mu[j] = m
            delivered[i] = mu

        states = {}
        for i, s in sending.items():
            mu = delivered[i]
            if r < self.cfg.replication_rounds:
                states[i] = replication_next(s, {j: tuple(m) for j, m in mu.items()
                                                 if not isinstance(m, LogSigMsg)}, self.registry)
            else:
                sigs = [m for m in mu.values() if isinstance(m, LogSigMsg)]
                states[i], _ = signing_next(s, sigs, self.registry)
        return Snapshot(r + 1, states, ledger), delivered


def run_lockstep(
    cfg: FaultConfig,
    adversary: Adversary | None,
    initial_entries: Mapping[NodeId, EntrySet],
    seed: int = 0,
) -> Trace:
    """Execute one full epoch (f+2 rounds by default) and record the run."""
    adversary = adversary or Silent()
    sim = Simulator(cfg, seed)
    inputs = {i: tuple(initial_entries.get(i, EMPTY)) for i in cfg.nodes}
    snap = sim.initial(inputs)
    history = {i: [s] for i, s in snap.states.items()}
    trace = Trace(cfg, adversary.name, seed, inputs, history, [], snap.ledger, {})
    rng = random.Random(seed)
    while snap.round < cfg.total_rounds:
        sending, outbox, ledger = sim.prepare(snap)
        view = sim.view(snap, sending, outbox, ledger, inputs, rng)
        forged = dict(adversary.messages(view) or {})
        try:
            snap, delivered = sim.deliver(snap, sending, outbox, ledger, forged)
        except InvalidAdversary as exc:
            trace.valid = False
            trace.invalid_reason = str(exc)
            trace.ledger = ledger
            return trace
        for i, s in snap.states.items():
            history[i].append(s)
        trace.delivered.append(delivered)
        trace.ledger = snap.ledger
    for i in cfg.nodes:
        cert = snap.states[i].certificate
        if cert is not None:
            trace.certificates[i] = cert
    return trace
