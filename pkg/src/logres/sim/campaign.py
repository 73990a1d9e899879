"""Seeded simulation campaigns, key-value config files and stable trace dumps.

A campaign config is a text file of ``key = value`` lines (``#`` starts a
comment)::

    n = 5
    f = 2
    F = 1,3
    mode = strict
    adversary = equivocation
    seed = 0
    runs = 100
    rounds = 3
    variant = fixed

A trace dump starts with the same keys as ``# key = value`` header lines, then
one ``msg`` record per delivered message and one ``final`` record per node::

    msg <round> <sender> <receiver> <sha256 of the wire encoding>
    final <node> <log digest> <decision vector hash> <signature count>

Dumps contain only deterministic data, so they double as golden files.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

from ..entries import EntrySet, encode_entry_set
from ..log import mk_digest
from ..replicate import CORRECT, Variant
from ..wire import LogSigMsg, encode_bundle, encode_log_sig
from .attacks import make_adversary
from .core import FaultConfig, Message, Trace, run_lockstep
from .properties import Verdict, check_all

VARIANTS = {
    "fixed": CORRECT,
    "unbound": Variant(bind_primary=False),
    "early-return": Variant(early_return=True),
}


def variant_name(v: Variant) -> str:
    for name, known in VARIANTS.items():
        if known == v:
            return name
    raise ValueError(f"unnamed variant {v}")


@dataclass(frozen=True)
class CampaignConfig:
    n: int = 5
    f: int = 2
    faulty: tuple[int, ...] | None = None  # None: the last f nodes
    mode: str = "strict"
    adversary: str = "silent"
    seed: int = 0
    runs: int = 1
    rounds: int | None = None
    inclusive: bool = True
    variant: str = "fixed"  # fixed | unbound | early-return | paired
    workload: str = "distinct"  # distinct | shared | random

    def faulty_set(self) -> frozenset[int]:
        if self.faulty is None:
            return frozenset(range(self.n - self.f, self.n))
        return frozenset(self.faulty)

    def protocol_variant(self) -> Variant:
        if self.variant == "paired":
            return getattr(make_adversary(self.adversary), "paired_variant", CORRECT)
        try:
            return VARIANTS[self.variant]
        except KeyError:
            raise ValueError(f"unknown variant {self.variant!r}") from None

    def fault_config(self) -> FaultConfig:
        return FaultConfig(
            self.n, self.f, self.faulty_set(), mode=self.mode, rounds=self.rounds,
            inclusive=self.inclusive, variant=self.protocol_variant(),
        )

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if key == "faulty":
                key = "F"
                value = ",".join(map(str, sorted(self.faulty_set())))
            elif value is None:
                continue
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


_INT_KEYS = {"n", "f", "seed", "runs", "rounds"}


def parse_config(text: str) -> CampaignConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = key.strip(), value.strip()
        if key == "F":
            values["faulty"] = tuple(int(v) for v in value.split(",") if v.strip())
        elif key in _INT_KEYS:
            values[key] = int(value)
        elif key == "inclusive":
            if value.lower() not in ("true", "false"):
                raise ValueError(f"line {lineno}: inclusive must be true or false")
            values[key] = value.lower() == "true"
        elif key in ("mode", "adversary", "variant", "workload"):
            values[key] = value
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    cfg = CampaignConfig(**values)
    cfg.fault_config()  # validate early
    return cfg


def load_config(path: str | Path) -> CampaignConfig:
    return parse_config(Path(path).read_text())


def workload(cfg: CampaignConfig, seed: int) -> dict[int, EntrySet]:
    """Initial entries per node for one run."""
    if cfg.workload == "distinct":
        return {i: (f"entry-{i}".encode(),) for i in range(cfg.n)}
    if cfg.workload == "shared":
        return {i: (b"entry-shared", f"entry-{i}".encode()) for i in range(cfg.n)}
    if cfg.workload == "random":
        rng = random.Random(f"workload:{seed}")
        pool = [f"entry-{k}".encode() for k in range(2 * cfg.n)]
        return {i: tuple(sorted(rng.sample(pool, rng.randint(0, 3)))) for i in range(cfg.n)}
    raise ValueError(f"unknown workload {cfg.workload!r}")


def run_one(cfg: CampaignConfig, seed: int) -> Trace:
    return run_lockstep(cfg.fault_config(), make_adversary(cfg.adversary), workload(cfg, seed), seed)


@dataclass
class RunResult:
    seed: int
    valid: bool
    verdicts: list[Verdict]
    invalid_reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.valid and all(self.verdicts)


@dataclass
class CampaignReport:
    config: CampaignConfig
    results: list[RunResult] = field(default_factory=list)

    @property
    def failures(self) -> list[RunResult]:
        return [r for r in self.results if not r.ok]

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        c = self.config
        head = (f"{c.adversary} n={c.n} f={c.f} F={sorted(c.faulty_set())} variant={c.variant}: "
                f"{len(self.results) - len(self.failures)}/{len(self.results)} runs pass")
        lines = [head]
        for r in self.failures[:5]:
            if not r.valid:
                lines.append(f"  seed {r.seed}: invalid adversary ({r.invalid_reason})")
            else:
                lines.extend(f"  seed {r.seed}: {v}" for v in r.verdicts if not v)
        return "\n".join(lines)


def run_campaign(cfg: CampaignConfig, seeds: Iterable[int] | None = None) -> CampaignReport:
    """Run ``cfg.runs`` seeds starting at ``cfg.seed`` and check every trace."""
    seeds = range(cfg.seed, cfg.seed + cfg.runs) if seeds is None else seeds
    report = CampaignReport(cfg)
    for seed in seeds:
        trace = run_one(cfg, seed)
        if not trace.valid:
            report.results.append(RunResult(seed, False, [], trace.invalid_reason))
        else:
            report.results.append(RunResult(seed, True, check_all(trace)))
    return report


def message_hash(msg: Message) -> str:
    if isinstance(msg, LogSigMsg):
        data = b"\x02" + encode_log_sig(msg)
    else:
        data = b"\x01" + encode_bundle(tuple(msg))
    return hashlib.sha256(data).hexdigest()


def dump_trace(trace: Trace, cfg: CampaignConfig) -> str:
    """Line-oriented, byte-stable rendering of a run."""
    lines = [f"# {line}" for line in cfg.to_text().splitlines() if not line.startswith(("seed", "runs"))]
    lines.append(f"# seed = {trace.seed}")
    lines.append(f"# valid = {str(trace.valid).lower()}")
    for r, per_receiver in enumerate(trace.delivered):
        for i in sorted(per_receiver):
            if i in trace.cfg.faulty:
                continue
            for j in sorted(per_receiver[i]):
                lines.append(f"msg {r} {j} {i} {message_hash(per_receiver[i][j])}")
    if trace.complete:
        for i in trace.cfg.nodes:
            s = trace.final(i)
            vector = b"".join(encode_entry_set(x) for x in (s.decisions or ()))
            lines.append(
                f"final {i} {mk_digest(s.log).hex()} {hashlib.sha256(vector).hexdigest()} {len(s.sigs)}"
            )
    return "\n".join(lines) + "\n"


def parse_dump_header(text: str) -> tuple[CampaignConfig, int]:
    header = []
    seed = 0
    for line in text.splitlines():
        if not line.startswith("# "):
            break
        body = line[2:]
        key = body.partition("=")[0].strip()
        if key == "seed":
            seed = int(body.partition("=")[2])
        elif key != "valid":
            header.append(body)
    return parse_config("\n".join(header)), seed


@dataclass
class ReplayResult:
    matches: bool
    first_difference: str | None
    trace: Trace
    expected: str
    actual: str


def replay(text: str) -> ReplayResult:
    """Re-run the run described by a dump and compare the regenerated dump."""
    cfg, seed = parse_dump_header(text)
    trace = run_one(cfg, seed)
    actual = dump_trace(trace, cfg)
    diff = None
    if actual != text:
        for k, (a, b) in enumerate(zip(text.splitlines(), actual.splitlines()), 1):
            if a != b:
                diff = f"line {k}: expected {a!r}, got {b!r}"
                break
        else:
            diff = "dumps differ in length"
    return ReplayResult(diff is None, diff, trace, text, actual)
