"""Bounded exhaustive adversary search.

For every faulty set of size f and every assignment of inputs (subsets of a
small entry domain) to the correct processes, the search enumerates every
message the faulty processes can deliver to every correct process in every
round, up to a per-message forge budget, and checks the properties on each
complete run.

Forged replication messages are built from *effective* witnessed values:
values in primary p's thread whose witness set contains p and meets the
round's threshold, each witness signature coming from a faulty key or from the
ledger.  Anything else is discarded by every protocol variant on arrival and
is therefore equivalent to sending nothing.  Several values for the same
(thread, value) pair are merged by receivers, so only one per pair is sent.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..entries import EntrySet
from ..replicate import CORRECT, Variant, WitnessedValue
from .core import AdversaryView, FaultConfig, Message, Simulator, Snapshot, Trace
from .properties import check_all


def value_domain(symbols: Sequence[bytes]) -> list[EntrySet]:
    symbols = sorted(set(symbols))
    return [tuple(c) for k in range(len(symbols) + 1) for c in itertools.combinations(symbols, k)]


def candidate_votes(view: AdversaryView, values: Sequence[EntrySet]) -> list[WitnessedValue]:
    cfg = view.cfg
    threshold = view.replicate_round
    out = []
    for p in cfg.nodes:
        others = [w for w in cfg.nodes if w != p]
        for v in values:
            for k in range(max(threshold - 1, 0), len(others) + 1):
                for rest in itertools.combinations(others, k):
                    wv = view.vote(v, p, (p,) + rest)
                    if wv is not None:
                        out.append(wv)
    return out


def candidate_messages(
    view: AdversaryView,
    sender: int,
    values: Sequence[EntrySet],
    budget: int,
    votes: list[WitnessedValue] | None = None,
) -> list[Message]:
    """Everything ``sender`` may deliver to one receiver this round; index 0 is ⊥."""
    options: list[Message] = [None]
    if budget <= 0:
        return options
    if view.signing:
        options.extend(view.log_sig(sender, d) for d in view.correct_digests())
        return options
    votes = candidate_votes(view, values) if votes is None else votes
    for k in range(1, budget + 1):
        for combo in itertools.combinations(votes, k):
            keys = {(wv.primary, wv.value) for wv in combo}
            if len(keys) < k:
                continue
            threads: dict[int, list[WitnessedValue]] = {}
            for wv in combo:
                threads.setdefault(wv.primary, []).append(wv)
            options.append(tuple(view.replicate(sender, p, vs) for p, vs in sorted(threads.items())))
    return options


@dataclass
class Violation:
    faulty: tuple[int, ...]
    inputs: dict[int, EntrySet]
    script: tuple[tuple[int, ...], ...]
    failures: list[str]
    trace: Trace = field(repr=False)

    def describe(self) -> str:
        ins = ",".join(f"{i}:{'+'.join(e.decode(errors='replace') for e in x) or '-'}"
                       for i, x in sorted(self.inputs.items()))
        path = "/".join(".".join(map(str, r)) for r in self.script)
        return f"F={list(self.faulty)} inputs={ins} script={path}: {'; '.join(self.failures)}"


def _variant_label(v: Variant) -> str:
    if v.is_fixed:
        return "fixed"
    return "+".join(k for k, on in (("unbound", not v.bind_primary), ("early-return", v.early_return)) if on)


@dataclass
class SearchReport:
    n: int
    f: int
    rounds: int
    budget: int
    domain: tuple[bytes, ...]
    variant: Variant
    runs: int = 0
    violations: list[Violation] = field(default_factory=list)
    elapsed: float = 0.0
    truncated: bool = False

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        status = "no violations" if self.ok else f"{len(self.violations)} violating runs"
        return (f"n={self.n} f={self.f} rounds={self.rounds} budget={self.budget} "
                f"domain={[d.decode(errors='replace') for d in self.domain]} "
                f"variant={_variant_label(self.variant)}: {self.runs} runs, {status} ({self.elapsed:.1f}s)")


class _Search:
    def __init__(self, sim: Simulator, inputs, values, budget, report, stop_after):
        self.sim = sim
        self.inputs = inputs
        self.values = values
        self.budget = budget
        self.report = report
        self.stop_after = stop_after

    def done(self) -> bool:
        return self.stop_after is not None and len(self.report.violations) >= self.stop_after

    def run(self, snap: Snapshot, history: list[dict], script: tuple) -> None:
        sim = self.sim
        cfg = sim.cfg
        if snap.round == cfg.total_rounds:
            self.leaf(snap, history, script)
            return
        sending, outbox, ledger = sim.prepare(snap)
        view = sim.view(snap, sending, outbox, ledger, self.inputs, rng=None)
        pairs = [(j, i) for i, senders in sorted(view.controlled.items()) for j in senders]
        votes = None if view.signing else candidate_votes(view, self.values)
        options = [candidate_messages(view, j, self.values, self.budget, votes) for j, _ in pairs]
        for combo in itertools.product(*(range(len(o)) for o in options)):
            if self.done():
                return
            forged = {pair: opts[k] for pair, opts, k in zip(pairs, options, combo) if k}
            child, _ = sim.deliver(snap, sending, outbox, ledger.fork(), forged)
            self.run(child, history + [child.states], script + (combo,))

    def leaf(self, snap: Snapshot, history: list[dict], script: tuple) -> None:
        cfg = self.sim.cfg
        states = {i: [h[i] for h in history] for i in cfg.nodes}
        trace = Trace(cfg, "search", self.sim.seed, dict(self.inputs), states, [], snap.ledger, {})
        self.report.runs += 1
        failed = [str(v) for v in check_all(trace) if not v]
        if failed:
            self.report.violations.append(
                Violation(tuple(sorted(cfg.faulty)), dict(self.inputs), script, failed, trace)
            )


def exhaustive_search(
    n: int = 3,
    f: int = 1,
    domain: Sequence[bytes] = (b"a",),
    budget: int = 1,
    *,
    rounds: int | None = None,
    variant: Variant = CORRECT,
    inclusive: bool = True,
    mode: str = "strict",
    faulty_sets: Iterable[Iterable[int]] | None = None,
    stop_after: int | None = None,
    seed: int = 0,
) -> SearchReport:
    """Enumerate all adversary choices within the closure, up to ``budget`` values per message."""
    if n > 4 or len(domain) > 2:
        raise ValueError("search space too large: need n <= 4 and at most 2 domain symbols")
    values = value_domain(domain)
    base = FaultConfig(n, f, mode=mode, rounds=rounds, inclusive=inclusive, variant=variant)
    report = SearchReport(n, f, base.replication_rounds, budget, tuple(sorted(set(domain))), variant)
    started = time.perf_counter()
    if faulty_sets is None:
        faulty_sets = itertools.combinations(range(n), f)
    for faulty in faulty_sets:
        cfg = FaultConfig(n, f, frozenset(faulty), mode=mode, rounds=rounds,
                          inclusive=inclusive, variant=variant)
        sim = Simulator(cfg, seed)
        for assignment in itertools.product(values, repeat=len(cfg.correct)):
            inputs = dict(zip(cfg.correct, assignment))
            search = _Search(sim, inputs, values, budget, report, stop_after)
            snap = sim.initial(inputs)
            search.run(snap, [snap.states], ())
            if search.done():
                report.truncated = True
                report.elapsed = time.perf_counter() - started
                return report
    report.elapsed = time.perf_counter() - started
    return report


class ScriptedAdversary:
    """Replays one branch of the search tree from its recorded option indices."""

    name = "scripted"

    def __init__(self, script: Sequence[Sequence[int]], domain: Sequence[bytes] = (b"a",), budget: int = 1):
        self.script = [tuple(r) for r in script]
        self.values = value_domain(domain)
        self.budget = budget

    def messages(self, view: AdversaryView):
        pairs = [(j, i) for i, senders in sorted(view.controlled.items()) for j in senders]
        choice = self.script[view.round]
        votes = None if view.signing else candidate_votes(view, self.values)
        out = {}
        for (j, i), k in zip(pairs, choice):
            if k:
                out[(j, i)] = candidate_messages(view, j, self.values, self.budget, votes)[k]
        return out
