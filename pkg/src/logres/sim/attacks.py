"""Canned adversary strategies.

Every strategy is deterministic given the run seed (through ``view.rng``) and
only builds messages from faulty keys and signatures already in the ledger, so
it always passes the closure check.  Faulty processes relay their honest shadow
traffic unless a strategy says otherwise.
"""

from __future__ import annotations

from typing import Callable, Mapping

from ..entries import union
from ..replicate import ReplicateMsg, Variant, WitnessedValue
from .core import AdversaryView, Message, Silent

Forged = dict[tuple[int, int], Message]


def _honest(view: AdversaryView) -> Forged:
    out: Forged = {}
    for i, senders in view.controlled.items():
        for j in senders:
            m = view.honest(j, i)
            if m:
                out[(j, i)] = m
    return out


def _add_values(
    view: AdversaryView, msg: Message, sender: int, primary: int, values: list[WitnessedValue]
) -> tuple[ReplicateMsg, ...]:
    """Return bundle ``msg`` with ``values`` added to ``primary``'s thread message."""
    bundle = list(msg or ())
    for k, m in enumerate(bundle):
        if m.primary == primary:
            bundle[k] = ReplicateMsg(m.sender, m.epoch, m.round, m.primary, m.values + tuple(values))
            break
    else:
        bundle.append(view.replicate(sender, primary, values))
    return tuple(sorted(bundle, key=lambda m: m.primary))


def _set_thread(
    view: AdversaryView, msg: Message, sender: int, primary: int, values: list[WitnessedValue]
) -> tuple[ReplicateMsg, ...]:
    bundle = [m for m in (msg or ()) if m.primary != primary]
    if values:
        bundle.append(view.replicate(sender, primary, values))
    return tuple(sorted(bundle, key=lambda m: m.primary))


def _marker(tag: str, *parts: object) -> bytes:
    return ("~" + tag + ":" + ":".join(str(p) for p in parts)).encode()


class Crash:
    """Faulty processes behave honestly, then fall silent from a seeded round on."""

    name = "crash"

    def __init__(self):
        self.crash_round: dict[int, int] = {}

    def messages(self, view):
        if not self.crash_round:
            for j in view.faulty:
                self.crash_round[j] = view.rng.randint(0, view.cfg.total_rounds)
        out = _honest(view)
        return {k: m for k, m in out.items() if view.round < self.crash_round[k[0]]}


class Equivocation:
    """Faulty primaries show different values to different correct processes.

    Round 1 splits the correct processes between two values; with at least two
    colluders, a third value witnessed by the whole coalition is pushed to a
    random subset in a later round where the coalition alone meets the witness
    threshold.
    """

    name = "equivocation"

    def __init__(self):
        self.plan: dict[int, tuple] = {}

    def _setup(self, view: AdversaryView) -> None:
        correct = view.cfg.correct
        coalition = len(view.faulty)
        for q in view.faulty:
            base = view.shadow_states[q].entries
            a = base
            b = union(base, (_marker("eq", q, "b"),))
            c = union(base, (_marker("eq", q, "c"),))
            split = {i: view.rng.random() < 0.5 for i in correct}
            silent = {i for i in correct if view.rng.random() < 0.2}
            late_round = view.rng.randint(1, coalition - 1) if coalition >= 2 else None
            late_targets = {i for i in correct if view.rng.random() < 0.5}
            self.plan[q] = (a, b, c, split, silent, late_round, late_targets)

    def messages(self, view):
        if not self.plan:
            self._setup(view)
        out = _honest(view)
        if view.signing:
            return out
        for q in view.faulty:
            a, b, c, split, silent, late_round, late_targets = self.plan[q]
            for i in view.cfg.correct:
                if q not in view.controlled.get(i, ()):
                    continue
                if view.round == 0:
                    if i in silent:
                        values = []
                    else:
                        values = [view.vote(b if split[i] else a, q, [q])]
                    out[(q, i)] = _set_thread(view, out.get((q, i)), q, q, values)
                elif view.round == late_round and i in late_targets:
                    wv = view.vote(c, q, view.faulty)
                    out[(q, i)] = _add_values(view, out.get((q, i)), q, q, [wv])
        return {k: m for k, m in out.items() if m}


class LastRoundInjection:
    """A faulty primary tries to introduce a fresh value in the final replication round.

    With ``witnessed=False`` the value carries only the coalition's signatures
    (f of them) and must be rejected everywhere.  With ``witnessed=True`` it is
    first shown to one correct process one round earlier, whose forward then
    carries f+1 witnesses and must reach every correct process.
    """

    def __init__(self, witnessed: bool = False):
        self.witnessed = witnessed
        self.name = "last-round-injection-witnessed" if witnessed else "last-round-injection"
        self.targets: set[int] | None = None

    def messages(self, view):
        out = _honest(view)
        if view.signing or not view.faulty:
            return out
        q = view.faulty[0]
        y = (_marker("late", q),)
        last = view.cfg.replication_rounds - 1
        if self.targets is None:
            correct = view.cfg.correct
            if self.witnessed:
                self.targets = {view.rng.choice(correct)}
            else:
                self.targets = {i for i in correct if view.rng.random() < 0.5} or {correct[0]}
        inject_round = last - 1 if self.witnessed else last
        if view.round != inject_round or inject_round < 0:
            return out
        wv = view.vote(y, q, view.faulty)
        for i in self.targets:
            sender = view.faulty[-1]
            if sender in view.controlled.get(i, ()):
                out[(sender, i)] = _add_values(view, out.get((sender, i)), sender, q, [wv])
        return out


class SignaturePadding:
    """Coalition-signed extra values sent in later rounds to inflate messages.

    Values in faulty primaries' threads are re-sent with every available
    witness; values in correct primaries' threads are coalition-signed junk
    (without the primary's signature they are dropped on arrival).  Neither
    changes any correct decision.
    """

    name = "signature-padding"

    def __init__(self, junk_size: int = 64):
        self.junk_size = junk_size

    def messages(self, view):
        out = _honest(view)
        if view.signing or view.round == 0:
            return out
        everyone = list(view.cfg.nodes)
        for i in view.cfg.correct:
            for j in view.controlled.get(i, ()):
                extra: dict[int, list[WitnessedValue]] = {}
                for q in view.faulty:
                    value = view.shadow_states[q].threads[q].input
                    avail = [w for w in everyone if view.witness_sig(w, value, q) is not None]
                    extra.setdefault(q, []).append(view.vote(value, q, avail))
                for p in view.cfg.correct:
                    junk = (bytes([0x7E]) + view.rng.randbytes(self.junk_size),)
                    extra.setdefault(p, []).append(view.vote(junk, p, view.faulty))
                msg = out.get((j, i))
                for p, values in sorted(extra.items()):
                    msg = _add_values(view, msg, j, p, values)
                out[(j, i)] = msg
        return out


class CrossThreadReplay:
    """Replay a correct process's witness signature from one thread into another.

    A faulty primary q proposes y in its own thread; the correct process c
    witnesses y there.  In the last replication round the coalition presents y
    in c's thread to one correct responder, reusing c's signature from q's
    thread.  With primary-bound vote payloads the replayed signature is
    invalid and is dropped.  Log signatures are withheld.
    """

    name = "cross-thread-replay"
    paired_variant = Variant(bind_primary=False)

    def __init__(self):
        self.plan = None

    def messages(self, view):
        cfg = view.cfg
        if not view.faulty:
            return {}
        q = view.faulty[0]
        if self.plan is None:
            correct = cfg.correct
            c = view.rng.choice(correct)
            victims = [i for i in correct if i != c]
            self.plan = (c, view.rng.choice(victims) if victims else None)
        c, victim = self.plan
        y = (_marker("replay", q),)
        out = _honest(view)
        if view.signing:
            return {}
        if view.round == 0:
            for i in cfg.correct:
                if q in view.controlled.get(i, ()):
                    out[(q, i)] = _set_thread(view, out.get((q, i)), q, q, [view.vote(y, q, [q])])
        if view.round == cfg.replication_rounds - 1 and victim is not None:
            # c's witness signature as emitted in q's thread
            stolen = view.ledger.find(c, view.payload(y, q), view.round, cfg.inclusive)
            if stolen is not None:
                sigs = [stolen] + [view.witness_sig(w, y, c) for w in view.faulty]
                wv = WitnessedValue(y, c, tuple(sigs))
                out[(q, victim)] = _add_values(view, out.get((q, victim)), q, c, [wv])
        return out


class PrematureExit:
    """Push a second value to one responder after the others' decisions look settled.

    Every correct responder accepts the faulty primary's value in round 1 and
    sees nothing new in round 2, except one victim that additionally receives a
    coalition-witnessed second value.  Responders that leave early keep the first
    value while the victim falls back to the empty set.  Needs two colluders.
    """

    name = "premature-exit"
    paired_variant = Variant(early_return=True)

    def __init__(self):
        self.victim = None

    def messages(self, view):
        cfg = view.cfg
        out = _honest(view)
        if view.signing:
            return {}
        if len(view.faulty) < 2:
            return out
        q1, q2 = view.faulty[0], view.faulty[1]
        if self.victim is None:
            self.victim = view.rng.choice(cfg.correct)
        if view.round == 1:
            y = union(view.shadow_states[q1].threads[q1].input, (_marker("exit", q1),))
            wv = view.vote(y, q1, [q1, q2])
            if q2 in view.controlled.get(self.victim, ()):
                out[(q2, self.victim)] = _add_values(view, out.get((q2, self.victim)), q2, q1, [wv])
        return out


class RandomForgery:
    """Random closure-respecting messages: fuzzing input for property tests."""

    name = "random"

    def __init__(self, domain: tuple[bytes, ...] = (b"a", b"b", b"z")):
        self.domain = domain

    def messages(self, view):
        rng = view.rng
        out: Forged = {}
        nodes = list(view.cfg.nodes)
        for i, senders in view.controlled.items():
            for j in senders:
                roll = rng.random()
                if roll < 0.2:
                    continue
                if roll < 0.5:
                    m = view.honest(j, i)
                    if m:
                        out[(j, i)] = m
                    continue
                if view.signing:
                    digests = view.correct_digests() + [bytes(32)]
                    out[(j, i)] = view.log_sig(j, rng.choice(digests))
                    continue
                bundle = []
                for p in nodes:
                    if rng.random() < 0.5:
                        continue
                    values = []
                    for _ in range(rng.randint(1, 2)):
                        value = tuple(sorted(e for e in self.domain if rng.random() < 0.5))
                        if rng.random() < 0.3 and p in view.shadow_states:
                            value = view.shadow_states[p].threads[p].input
                        witnesses = [w for w in nodes if rng.random() < 0.6] + [p]
                        wv = view.vote(value, p, [w for w in witnesses
                                                  if view.witness_sig(w, value, p) is not None])
                        if wv is not None and wv.sigs:
                            values.append(wv)
                    if values:
                        bundle.append(view.replicate(j, p, values))
                if bundle:
                    out[(j, i)] = tuple(bundle)
        return out


Factory = Callable[[], object]


def attack_library() -> Mapping[str, Factory]:
    """Name -> zero-argument factory producing a fresh adversary instance."""
    return {
        "silent": Silent,
        "crash": Crash,
        "equivocation": Equivocation,
        "last-round-injection": LastRoundInjection,
        "last-round-injection-witnessed": lambda: LastRoundInjection(witnessed=True),
        "signature-padding": SignaturePadding,
        "cross-thread-replay": CrossThreadReplay,
        "premature-exit": PrematureExit,
        "random": RandomForgery,
    }


def make_adversary(name: str):
    try:
        return attack_library()[name]()
    except KeyError:
        raise ValueError(f"unknown adversary {name!r}; known: {', '.join(attack_library())}") from None
