"""Node identities, signature schemes and domain-separated signing payloads.

Two backends share one interface:

* ``ed25519`` -- real asymmetric signatures, used by the networked runtime.
* ``hmac``    -- a keyed MAC per node.  The "public" key equals the secret, so
  it is only meaningful inside a test harness that never hands correct nodes'
  keys to an adversary.  It is fast and fully deterministic, which is what the
  simulator and the exhaustive search need.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from typing import Mapping

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .entries import EntrySet, encode_entry_set

NodeId = int

TAG_VOTE = 0x01
TAG_LOG_SIG = 0x02

DIGEST_SIZE = 32
SEED_SIZE = 32


class CryptoError(ValueError):
    pass


@dataclass(frozen=True)
class Signature:
    signer: NodeId
    data: bytes

    def __repr__(self) -> str:
        return f"Signature({self.signer}, {self.data[:4].hex()}..)"


@dataclass(frozen=True)
class KeyPair:
    node: NodeId
    secret: bytes = field(repr=False)
    public: bytes
    scheme: str = "ed25519"


class _Ed25519:
    name = "ed25519"

    def derive(self, seed: bytes, node: NodeId) -> tuple[bytes, bytes]:
        raw = hashlib.sha256(b"logres/ed25519" + seed + struct.pack(">H", node)).digest()
        pub = Ed25519PrivateKey.from_private_bytes(raw).public_key()
        return raw, pub.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)

    def sign(self, secret: bytes, payload: bytes) -> bytes:
        return _ed_private(secret).sign(payload)

    def verify(self, public: bytes, payload: bytes, sig: bytes) -> bool:
        try:
            _ed_public(public).verify(sig, payload)
        except (InvalidSignature, ValueError):
            return False
        return True


class _Hmac:
    name = "hmac"

    def derive(self, seed: bytes, node: NodeId) -> tuple[bytes, bytes]:
        key = hashlib.sha256(b"logres/hmac" + seed + struct.pack(">H", node)).digest()
        return key, key

    def sign(self, secret: bytes, payload: bytes) -> bytes:
        return hmac.new(secret, payload, hashlib.sha256).digest()

    def verify(self, public: bytes, payload: bytes, sig: bytes) -> bool:
        return hmac.compare_digest(self.sign(public, payload), sig)


SCHEMES = {s.name: s for s in (_Ed25519(), _Hmac())}

_ed_private_cache: dict[bytes, Ed25519PrivateKey] = {}
_ed_public_cache: dict[bytes, Ed25519PublicKey] = {}


def _ed_private(secret: bytes) -> Ed25519PrivateKey:
    key = _ed_private_cache.get(secret)
    if key is None:
        key = _ed_private_cache[secret] = Ed25519PrivateKey.from_private_bytes(secret)
    return key


def _ed_public(public: bytes) -> Ed25519PublicKey:
    key = _ed_public_cache.get(public)
    if key is None:
        key = _ed_public_cache[public] = Ed25519PublicKey.from_public_bytes(public)
    return key


def _scheme(name: str):
    try:
        return SCHEMES[name]
    except KeyError:
        raise CryptoError(f"unknown signature scheme {name!r}") from None


def keygen(seed: bytes, node: NodeId, scheme: str = "ed25519") -> KeyPair:
    """Derive the key pair of ``node`` deterministically from a 32-byte seed."""
    if len(seed) != SEED_SIZE:
        raise CryptoError(f"seed must be {SEED_SIZE} bytes")
    if not 0 <= node <= 0xFFFF:
        raise CryptoError("node id must fit in 16 bits")
    secret, public = _scheme(scheme).derive(seed, node)
    return KeyPair(node, secret, public, scheme)


def keypair_from_secret(node: NodeId, secret: bytes, scheme: str = "ed25519") -> KeyPair:
    """Rebuild a key pair from a stored secret."""
    if len(secret) != SEED_SIZE:
        raise CryptoError(f"secret must be {SEED_SIZE} bytes")
    _scheme(scheme)
    if scheme == "hmac":
        return KeyPair(node, secret, secret, scheme)
    pub = _ed_private(secret).public_key()
    return KeyPair(node, secret, pub.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw), scheme)


@dataclass(frozen=True)
class PublicRegistry:
    """Verification keys of all ``n`` nodes plus the fault bound ``f``.

    ``strict`` enforces a correct majority (n > 2f); the simulator's weak
    mode only needs n > f.
    """

    keys: Mapping[NodeId, bytes]
    f: int
    scheme: str = "ed25519"
    strict: bool = True

    def __post_init__(self):
        n = len(self.keys)
        if sorted(self.keys) != list(range(n)):
            raise CryptoError("node ids must be dense in [0, n)")
        if self.f < 0:
            raise CryptoError("f must be non-negative")
        if self.strict and not n > 2 * self.f:
            raise CryptoError(f"n > 2f required (n={n}, f={self.f})")
        if not n > self.f:
            raise CryptoError(f"n > f required (n={n}, f={self.f})")
        _scheme(self.scheme)
        object.__setattr__(self, "keys", dict(self.keys))

    @property
    def n(self) -> int:
        return len(self.keys)

    @property
    def quorum(self) -> int:
        return self.f + 1

    @classmethod
    def from_keypairs(cls, pairs, f: int, strict: bool = True) -> "PublicRegistry":
        pairs = list(pairs)
        schemes = {kp.scheme for kp in pairs}
        if len(schemes) != 1:
            raise CryptoError("all key pairs must use one scheme")
        return cls({kp.node: kp.public for kp in pairs}, f, schemes.pop(), strict)


def generate_keys(seed: bytes, n: int, f: int, scheme: str = "ed25519",
                  strict: bool = True) -> tuple[list[KeyPair], PublicRegistry]:
    pairs = [keygen(seed, i, scheme) for i in range(n)]
    return pairs, PublicRegistry.from_keypairs(pairs, f, strict)


def vote_payload(x: EntrySet, p: NodeId) -> bytes:
    """Payload a witness signs to vouch for value ``x`` in primary ``p``'s thread."""
    return bytes([TAG_VOTE]) + struct.pack(">H", p) + encode_entry_set(x)


def unbound_vote_payload(x: EntrySet, p: NodeId) -> bytes:
    """Vote payload that omits the primary.

    Only used by the deliberately weakened protocol variant that reproduces
    the cross-thread replay flaw.
    """
    return bytes([TAG_VOTE]) + encode_entry_set(x)


def log_sig_payload(digest: bytes) -> bytes:
    if len(digest) != DIGEST_SIZE:
        raise CryptoError(f"digest must be {DIGEST_SIZE} bytes, got {len(digest)}")
    return bytes([TAG_LOG_SIG]) + digest


def sign(kp: KeyPair, payload: bytes) -> Signature:
    return Signature(kp.node, _scheme(kp.scheme).sign(kp.secret, payload))


def verify(reg: PublicRegistry, s: Signature, payload: bytes) -> bool:
    """Check ``s`` against the registered key of its signer; unknown signers fail."""
    public = reg.keys.get(s.signer)
    if public is None:
        return False
    return SCHEMES[reg.scheme].verify(public, payload, s.data)
