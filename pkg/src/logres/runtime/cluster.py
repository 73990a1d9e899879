"""In-process loopback clusters for tests and benchmarks."""

from __future__ import annotations

import asyncio
import os
import socket
import time
from pathlib import Path
from typing import Iterable

from ..crypto import generate_keys
from ..log import LogCertificate, mk_digest, validate_certificate
from .config import Address, Deployment, Member
from .node import NodeRuntime


def free_ports(count: int, host: str = "127.0.0.1") -> list[int]:
    socks = []
    try:
        for _ in range(count):
            s = socket.socket()
            s.bind((host, 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def local_deployments(
    n: int,
    f: int,
    *,
    period: int,
    round_length: int,
    seed: bytes | None = None,
    link_latency: float = 0.0,
    bandwidth: float = 0.0,
    max_entry_size: int = 4096,
    origin: int | None = None,
    data_root: Path | None = None,
    behaviours: dict[int, str] | None = None,
    host: str = "127.0.0.1",
) -> list[Deployment]:
    """One deployment per node on loopback with fresh ports and in-memory keys."""
    seed = seed if seed is not None else os.urandom(32)
    pairs, _ = generate_keys(seed, n, f)
    ports = free_ports(n, host)
    members = tuple(Member(i, Address(host, ports[i]), pairs[i].public) for i in range(n))
    if origin is None:
        origin = int(time.time() * 1000)
    behaviours = behaviours or {}
    return [
        Deployment(
            members, i, f, period=period, round_length=round_length, max_entry_size=max_entry_size,
            origin=origin, link_latency=link_latency, bandwidth=bandwidth,
            data_dir=(data_root / f"node-{i}") if data_root else None,
            behaviour=behaviours.get(i, "honest"), secret=pairs[i].secret,
        )
        for i in range(n)
    ]


class LocalCluster:
    """Runs the given nodes in the current event loop; ``down`` nodes are never started."""

    def __init__(self, deps: list[Deployment], down: Iterable[int] = ()):
        self.deps = deps
        self.down = set(down)
        self.nodes: dict[int, NodeRuntime] = {}
        self._tasks: list[asyncio.Task] = []

    @property
    def addresses(self) -> list[str]:
        return [str(m.address) for m in self.deps[0].members]

    @property
    def registry(self):
        return self.deps[0].registry()

    async def __aenter__(self) -> "LocalCluster":
        for d in self.deps:
            if d.self_id in self.down:
                continue
            node = NodeRuntime(d)
            await node.start()
            self.nodes[d.self_id] = node
        loop = asyncio.get_running_loop()
        self._tasks = [loop.create_task(node.run()) for node in self.nodes.values()]
        return self

    async def __aexit__(self, *exc) -> None:
        for node in self.nodes.values():
            node.stop()
        await asyncio.gather(*self._tasks, return_exceptions=True)

    def certificates(self) -> dict[int, LogCertificate | None]:
        return {i: node.certificate for i, node in self.nodes.items()}

    async def wait_for(self, predicate, timeout: float, poll: float = 0.01) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if predicate():
                return True
            await asyncio.sleep(poll)
        return predicate()

    async def wait_for_entries(self, entries: Iterable[bytes], timeout: float) -> bool:
        wanted = list(entries)

        def done() -> bool:
            for node in self.nodes.values():
                cert = node.certificate
                if cert is None or any(e not in cert.log for e in wanted):
                    return False
            return True

        return await self.wait_for(done, timeout)

    def check_agreement(self, now_ms: int | None = None) -> list[str]:
        """Problems with the nodes' latest certificates (empty list means all good)."""
        now_ms = int(time.time() * 1000) if now_ms is None else now_ms
        problems = []
        certs = self.certificates()
        by_epoch: dict[int, set[bytes]] = {}
        reg = self.registry
        for i, cert in sorted(certs.items()):
            if cert is None:
                problems.append(f"node {i} has no certificate")
                continue
            check = validate_certificate(cert, reg, now_ms)
            if not check:
                problems.append(f"node {i}: certificate invalid ({check.reason.value})")
            by_epoch.setdefault(cert.log.epoch, set()).add(mk_digest(cert.log))
        for epoch, digests in by_epoch.items():
            if len(digests) > 1:
                problems.append(f"epoch {epoch}: {len(digests)} different logs")
        return problems
