"""Deployment description and its key-value config file.

Example::

    self = 0
    f = 2
    period = 60000          # ms
    round_length = 100      # ms
    max_entry_size = 4096
    data_dir = ./data/node-0
    key_file = node-0.key
    node = 0 127.0.0.1:7000 <hex public key>
    node = 1 127.0.0.1:7001 <hex public key>
    ...
    http = 127.0.0.1:8000   # optional JSON API

``node`` lines repeat, one per member.  ``LOGRES_DATA_DIR`` overrides
``data_dir``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..crypto import KeyPair, PublicRegistry, keypair_from_secret
from ..entries import DEFAULT_MAX_ENTRY_SIZE, HARD_MAX_ENTRY_SIZE

DATA_DIR_ENV = "LOGRES_DATA_DIR"
BEHAVIOURS = ("honest", "padding")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Address:
    host: str
    port: int

    @classmethod
    def parse(cls, text: str) -> "Address":
        host, sep, port = text.strip().rpartition(":")
        if not sep or not host:
            raise ConfigError(f"expected host:port, got {text!r}")
        try:
            return cls(host, int(port))
        except ValueError:
            raise ConfigError(f"bad port in {text!r}") from None

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"


@dataclass(frozen=True)
class Member:
    node: int
    address: Address
    public: bytes


@dataclass(frozen=True)
class NetParams:
    """Link model: one-way latency (ms), bandwidth (bits/s) and entry size (bytes)."""

    link_latency: float
    bandwidth: float
    entry_size: int

    def __post_init__(self):
        if self.link_latency < 0 or self.bandwidth <= 0 or self.entry_size <= 0:
            raise ConfigError("latency must be >= 0, bandwidth and entry size > 0")


@dataclass(frozen=True)
class Deployment:
    members: tuple[Member, ...]
    self_id: int
    f: int
    period: int = 60_000
    round_length: float = 100.0
    max_entry_size: int = DEFAULT_MAX_ENTRY_SIZE
    data_dir: Path | None = None
    key_file: Path | None = None
    origin: int = 0  # ms since the Unix epoch where slot 0 starts
    http: Address | None = None
    # emulated link properties applied to outgoing peer traffic; 0 disables
    link_latency: float = 0.0
    bandwidth: float = 0.0
    behaviour: str = "honest"
    secret: bytes | None = field(default=None, repr=False)

    def __post_init__(self):
        ids = [m.node for m in self.members]
        if sorted(ids) != list(range(len(ids))):
            raise ConfigError("node ids must be 0..n-1, each once")
        if len({m.address for m in self.members}) != len(self.members):
            raise ConfigError("node addresses must be distinct")
        if self.self_id not in ids:
            raise ConfigError(f"self = {self.self_id} is not a member")
        if not self.n > 2 * self.f:
            raise ConfigError(f"need n > 2f (n={self.n}, f={self.f})")
        if self.round_length <= 0:
            raise ConfigError("round_length must be positive")
        if self.period < (self.f + 2) * self.round_length:
            raise ConfigError(
                f"period {self.period} ms is shorter than (f+2) x round_length = "
                f"{(self.f + 2) * self.round_length} ms"
            )
        if not 1 <= self.max_entry_size <= HARD_MAX_ENTRY_SIZE:
            raise ConfigError(f"max_entry_size must be in 1..{HARD_MAX_ENTRY_SIZE}")
        if self.behaviour not in BEHAVIOURS:
            raise ConfigError(f"behaviour must be one of {BEHAVIOURS}")

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def me(self) -> Member:
        return self.members[self.self_id]

    @property
    def collection_window(self) -> int:
        return self.period - (self.f + 2) * self.round_length

    def registry(self) -> PublicRegistry:
        return PublicRegistry({m.node: m.public for m in self.members}, self.f)

    def keypair(self) -> KeyPair:
        secret = self.secret
        if secret is None:
            if self.key_file is None:
                raise ConfigError("no key_file configured")
            secret = read_secret(self.key_file)
        kp = keypair_from_secret(self.self_id, secret)
        if kp.public != self.me.public:
            raise ConfigError(f"key in {self.key_file} does not match node {self.self_id}'s public key")
        return kp

    def resolved_data_dir(self) -> Path | None:
        env = os.environ.get(DATA_DIR_ENV)
        if env:
            return Path(env)
        return self.data_dir

    def for_node(self, node: int, **changes) -> "Deployment":
        return replace(self, self_id=node, **changes)


def read_secret(path: str | Path) -> bytes:
    text = Path(path).read_text().strip()
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise ConfigError(f"{path}: key file must hold a hex secret") from None


_INT_KEYS = {"self": "self_id", "f": "f", "period": "period",
             "max_entry_size": "max_entry_size", "origin": "origin"}
_FLOAT_KEYS = {"round_length", "link_latency", "bandwidth"}


def parse_deployment(text: str, base: Path | None = None) -> Deployment:
    """Parse a deployment file; relative paths resolve against ``base``."""
    base = base or Path.cwd()
    values: dict = {}
    members = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        try:
            if key == "node":
                node, addr, pub = value.split()
                members.append(Member(int(node), Address.parse(addr), bytes.fromhex(pub)))
            elif key in _INT_KEYS:
                values[_INT_KEYS[key]] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key in ("data_dir", "key_file"):
                values[key] = base / value
            elif key == "http":
                values[key] = Address.parse(value)
            elif key == "behaviour":
                values[key] = value
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    members.sort(key=lambda m: m.node)
    for required in ("self_id", "f"):
        if required not in values:
            raise ConfigError(f"missing key {'self' if required == 'self_id' else required!r}")
    return Deployment(tuple(members), **values)


def load_deployment(path: str | Path) -> Deployment:
    path = Path(path)
    return parse_deployment(path.read_text(), path.parent)


def render_deployment(dep: Deployment) -> str:
    lines = [
        f"self = {dep.self_id}",
        f"f = {dep.f}",
        f"period = {dep.period}",
        f"round_length = {dep.round_length:g}",
        f"max_entry_size = {dep.max_entry_size}",
        f"origin = {dep.origin}",
    ]
    if dep.data_dir is not None:
        lines.append(f"data_dir = {dep.data_dir}")
    if dep.key_file is not None:
        lines.append(f"key_file = {dep.key_file}")
    if dep.http is not None:
        lines.append(f"http = {dep.http}")
    if dep.link_latency:
        lines.append(f"link_latency = {dep.link_latency:g}")
    if dep.bandwidth:
        lines.append(f"bandwidth = {dep.bandwidth:g}")
    if dep.behaviour != "honest":
        lines.append(f"behaviour = {dep.behaviour}")
    lines.extend(f"node = {m.node} {m.address} {m.public.hex()}" for m in dep.members)
    return "\n".join(lines) + "\n"
