"""Latency and throughput benchmarks on an in-process loopback cluster.

Latency follows the sweep method: start from a comfortable round length and
shrink it step by step while a single request per period is still processed
reliably; the reported latency is (f+2) times the smallest working round
length.  Throughput pushes a fixed workload through several periods,
optionally with nodes running the signature-padding behaviour.
"""

from __future__ import annotations

import asyncio
import hashlib
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field

from .client import accepted, submit, submit_batch
from .cluster import LocalCluster, local_deployments
from .config import ConfigError, NetParams
from .latency import TESTBED_ROUND_MS, lower_bound_latency, round_min

log = logging.getLogger(__name__)


def make_entry(tag: str, index: int, size: int) -> bytes:
    """Deterministic pseudo-random entry of exactly ``size`` bytes."""
    out = bytearray()
    block = 0
    while len(out) < size:
        out += hashlib.sha256(f"{tag}:{index}:{block}".encode()).digest()
        block += 1
    return bytes(out[:size])


def _wait_until(t: float):
    return asyncio.sleep(max(0.0, t - time.time()))


# latency


@dataclass
class LatencyTrial:
    round_length: float
    ok: bool
    processing_ms: list[float] = field(default_factory=list)  # collection close -> last publication
    request_ms: list[float] = field(default_factory=list)  # submission -> last publication
    problems: list[str] = field(default_factory=list)


@dataclass
class LatencyReport:
    n: int
    f: int
    net: NetParams
    min_round_ms: float | None
    latency_ms: float | None  # (f+2) x min_round_ms
    lower_bound_ms: float  # analytic
    testbed_bound_ms: float  # with the testbed per-round constant
    processing_ms: float | None  # median at the minimum round length
    request_ms: float | None
    trials: list[LatencyTrial]

    def to_dict(self) -> dict:
        return asdict(self)


async def latency_trial(n: int, f: int, net: NetParams, round_length: float, *, periods: int = 3,
                        collection_ms: int = 120, down: tuple[int, ...] = (),
                        warmup: int = 1) -> LatencyTrial:
    """Run ``periods`` epochs with one request each; ok iff every one is published everywhere."""
    period = collection_ms + math.ceil((f + 2) * round_length)
    deps = local_deployments(n, f, period=period, round_length=round_length,
                             link_latency=net.link_latency, bandwidth=net.bandwidth,
                             max_entry_size=max(4096, net.entry_size))
    trial = LatencyTrial(round_length, True)
    async with LocalCluster(deps, down) as cluster:
        nodes = list(cluster.nodes.values())
        first = nodes[0]
        slot = first.next_slot()
        if time.time() > slot.start + (slot.collect_end - slot.start) / 3:
            slot = first.slot_at(slot.index + 1)
        # the first slot opens the peer connections and is not measured
        slot = first.slot_at(slot.index + warmup)
        for k in range(periods):
            s = first.slot_at(slot.index + k)
            entry = make_entry(f"latency:{round_length}", k, net.entry_size)
            await _wait_until(s.collect_end - 0.25 * (s.collect_end - s.start))
            sent = time.time()
            acks = await submit(entry, cluster.addresses[: f + 1], timeout=1.0)
            if accepted(acks) == 0:
                trial.ok = False
                trial.problems.append(f"period {k}: no node accepted the request")
                continue
            published = await cluster.wait_for_entries([entry], timeout=(s.end - time.time()) + 0.05)
            if not published:
                trial.ok = False
                trial.problems.append(f"period {k}: request not published by every node within its slot")
                await _wait_until(s.end + 0.001)
                continue
            times = [p.at for node in nodes for p in node.publications if p.slot == s.index]
            if len(times) < len(nodes):
                trial.ok = False
                trial.problems.append(f"period {k}: only {len(times)} nodes published in their slot")
                await _wait_until(s.end + 0.001)
                continue
            last = max(times)
            trial.processing_ms.append((last - s.collect_end) * 1000)
            trial.request_ms.append((last - sent) * 1000)
            problems = cluster.check_agreement()
            if problems:
                trial.ok = False
                trial.problems.extend(problems)
            await _wait_until(s.end + 0.001)
    return trial


async def bench_latency(n: int = 5, f: int = 2, net: NetParams | None = None, *,
                        start_round: float = 40.0, step: float = 2.0, periods: int = 3,
                        collection_ms: int = 120, max_trials: int = 40,
                        confirm_failures: bool = True) -> LatencyReport:
    """Shrink the round length from ``start_round`` by ``step`` until requests stop being published.

    A failing round length is re-run once before the sweep stops, so a single
    scheduling hiccup on a loaded host does not end the sweep early.
    """
    net = net or NetParams(20.0, 100e6, 1570)
    floor = round_min(net)
    trials: list[LatencyTrial] = []
    best = None
    r = start_round
    while len(trials) < max_trials and r >= floor:
        trial = await latency_trial(n, f, net, r, periods=periods, collection_ms=collection_ms)
        trials.append(trial)
        log.info("round %.2f ms: %s", r, "ok" if trial.ok else "; ".join(trial.problems))
        if not trial.ok and confirm_failures:
            trial = await latency_trial(n, f, net, r, periods=periods, collection_ms=collection_ms)
            trials.append(trial)
            log.info("round %.2f ms (retry): %s", r, "ok" if trial.ok else "; ".join(trial.problems))
        if not trial.ok:
            break
        best = trial
        r = round(r - step, 6)
    return LatencyReport(
        n, f, net,
        min_round_ms=best.round_length if best else None,
        latency_ms=(f + 2) * best.round_length if best else None,
        lower_bound_ms=lower_bound_latency(f, net),
        testbed_bound_ms=lower_bound_latency(f, net, TESTBED_ROUND_MS),
        processing_ms=statistics.median(best.processing_ms) if best and best.processing_ms else None,
        request_ms=statistics.median(best.request_ms) if best and best.request_ms else None,
        trials=trials,
    )


# throughput


@dataclass
class ThroughputReport:
    n: int
    f: int
    entries_per_period: int
    entry_size: int
    period_ms: int
    periods: int
    padding_nodes: list[int]
    logged_per_epoch: list[int]  # new entries certified in each epoch
    entries_logged: int
    entries_per_second: float
    log_fingerprint: str  # hash of the final certified entry set
    agreement_problems: list[str]

    def to_dict(self) -> dict:
        return asdict(self)


def entries_fingerprint(entries) -> str:
    h = hashlib.sha256()
    for e in entries:
        h.update(len(e).to_bytes(4, "big") + e)
    return h.hexdigest()


async def bench_throughput(n: int = 5, f: int = 2, *, entries_per_period: int = 1000, entry_size: int = 1570,
                           period: int = 60_000, round_length: float = 2_000, periods: int = 1,
                           padding: tuple[int, ...] = (), link_latency: float = 0.0,
                           bandwidth: float = 0.0, workload_tag: str = "tp") -> ThroughputReport:
    """Submit ``entries_per_period`` entries (each to f+1 nodes) in every period and count what gets logged.

    Runs with and without padding nodes can be compared through
    ``log_fingerprint``; log digests differ between runs because expiration
    times depend on the wall clock.
    """
    if len(padding) > f:
        raise ConfigError("at most f nodes may run the padding behaviour")
    deps = local_deployments(n, f, period=period, round_length=round_length,
                             link_latency=link_latency, bandwidth=bandwidth,
                             max_entry_size=max(4096, entry_size),
                             behaviours={i: "padding" for i in padding})
    correct = [i for i in range(n) if i not in padding]
    async with LocalCluster(deps) as cluster:
        observer = cluster.nodes[correct[0]]
        slot = observer.next_slot()
        if time.time() > slot.start + 0.1 * (slot.collect_end - slot.start):
            slot = observer.slot_at(slot.index + 1)
        started = slot.start
        for k in range(periods):
            s = observer.slot_at(slot.index + k)
            await _wait_until(s.start + 0.001)
            per_node: dict[int, list[bytes]] = {i: [] for i in range(n)}
            for j in range(entries_per_period):
                e = make_entry(f"{workload_tag}:{k}", j, entry_size)
                for t in range(f + 1):
                    per_node[(j + t) % n].append(e)
            await asyncio.gather(*(submit_batch(batch, cluster.addresses[i], timeout=30.0)
                                   for i, batch in per_node.items() if batch))
            if time.time() > s.collect_end:
                log.warning("period %d: submissions overran the collection window", k)
            await _wait_until(s.end + 0.05)
        elapsed = time.time() - started
        problems = cluster.check_agreement()
        cert = observer.certificate
        counts, before = [], 0
        for p in observer.publications:
            counts.append(p.entries - before)
            before = p.entries
        total = len(cert.log.entries) if cert else 0
        return ThroughputReport(
            n, f, entries_per_period, entry_size, period, periods, list(padding), counts, total,
            total / elapsed if elapsed > 0 else 0.0,
            entries_fingerprint(cert.log.entries) if cert else "", problems,
        )
