"""Property oracles evaluated on complete traces.

Agreement, Completeness and Liveness are checked on the final states
``s^(f+2)`` of the correct processes; the interactive-consistency check looks at
the decision vectors at the end of the replication phase.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from ..entries import short
from ..log import mk_digest
from ..wire import LogSigMsg
from .core import Trace


@dataclass(frozen=True)
class Verdict:
    name: str
    ok: bool
    failures: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        if self.ok:
            return f"{self.name}: ok"
        return f"{self.name}: FAILED ({'; '.join(self.failures)})"


def _require_complete(trace: Trace) -> None:
    if not trace.valid:
        raise ValueError(f"invalid run: {trace.invalid_reason}")
    if not trace.complete:
        raise ValueError("trace is incomplete")


def check_agreement(trace: Trace) -> Verdict:
    """All correct final logs are equal, and no other log can gather f+1 signers.

    The second part assumes every faulty process signs anything; a competing
    digest is dangerous as soon as its correct signers plus |F| reach f+1.
    """
    _require_complete(trace)
    cfg = trace.cfg
    failures = []
    logs = {i: trace.final(i).log for i in cfg.correct}
    distinct = set(logs.values())
    if len(distinct) > 1:
        groups: dict[bytes, list[int]] = {}
        for i, lg in logs.items():
            groups.setdefault(mk_digest(lg).hex()[:12], []).append(i)
        failures.append("correct logs differ: " + ", ".join(f"{h}<-{v}" for h, v in sorted(groups.items())))

    signed = Counter()
    r = cfg.replication_rounds
    for i in cfg.correct:
        digests = {m.digest for m in trace.ledger.sent.get((i, r), {}).values()
                   if isinstance(m, LogSigMsg) and m.sender == i}
        signed.update(digests)
    agreed = {mk_digest(lg) for lg in distinct} if len(distinct) == 1 else set()
    for digest, count in sorted(signed.items()):
        if digest in agreed:
            continue
        if count + len(cfg.faulty) >= cfg.f + 1:
            failures.append(f"digest {digest.hex()[:12]} reachable with {count} correct + "
                            f"{len(cfg.faulty)} faulty signers")
    return Verdict("agreement", not failures, tuple(failures))


def check_completeness(trace: Trace) -> Verdict:
    _require_complete(trace)
    failures = []
    for i in trace.cfg.correct:
        collected = trace.state(i, 1).entries
        final = trace.final(i).log
        missing = [e for e in collected if e not in final]
        if missing:
            failures.append(f"node {i} lost {short(tuple(missing))}")
    return Verdict("completeness", not failures, tuple(failures))


def check_liveness(trace: Trace) -> Verdict:
    _require_complete(trace)
    cfg = trace.cfg
    failures = []
    for i in cfg.correct:
        got = len(trace.final(i).sigs)
        if got < cfg.f + 1:
            failures.append(f"node {i} has {got} < {cfg.f + 1} signatures")
    return Verdict("liveness", not failures, tuple(failures))


def check_interactive_consistency(trace: Trace) -> Verdict:
    """IC1: equal decision vectors; IC2: slot i is correct node i's input."""
    _require_complete(trace)
    cfg = trace.cfg
    failures = []
    r = cfg.replication_rounds
    vectors = {i: trace.state(i, r).decisions for i in cfg.correct}
    if len(set(vectors.values())) > 1:
        for p in cfg.nodes:
            slot = {i: v[p] for i, v in vectors.items()}
            if len(set(slot.values())) > 1:
                failures.append(f"thread {p}: " + ", ".join(f"{i}={short(x)}" for i, x in sorted(slot.items())))
    for p in cfg.correct:
        want = trace.inputs[p]
        for i, v in vectors.items():
            if v[p] != want:
                failures.append(f"node {i} decided {short(v[p])} for correct primary {p}")
    return Verdict("interactive-consistency", not failures, tuple(failures))


def check_all(trace: Trace) -> list[Verdict]:
    """The properties a run must satisfy under its mode.

    Without a correct majority (weak mode, n <= 2f) only the replication-phase
    guarantees are claimed.
    """
    cfg = trace.cfg
    if cfg.mode == "weak" and cfg.n <= 2 * cfg.f:
        return [check_interactive_consistency(trace)]
    return [check_agreement(trace), check_completeness(trace), check_liveness(trace)]
