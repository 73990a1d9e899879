import pytest
from hypothesis import given
from hypothesis import strategies as st

from logres.crypto import (
    CryptoError,
    PublicRegistry,
    Signature,
    generate_keys,
    keygen,
    keypair_from_secret,
    log_sig_payload,
    sign,
    unbound_vote_payload,
    verify,
    vote_payload,
)
from logres.entries import entry_set

ZERO = bytes(32)
small_sets = st.lists(st.binary(min_size=1, max_size=3), max_size=3).map(entry_set)
ids = st.integers(0, 0xFFFF)


@pytest.mark.parametrize("scheme", ["ed25519", "hmac"])
def test_keygen_deterministic(scheme):
    assert keygen(ZERO, 0, scheme) == keygen(ZERO, 0, scheme)
    assert keygen(ZERO, 0, scheme).public != keygen(ZERO, 1, scheme).public
    assert keygen(ZERO, 0, scheme).public != keygen(b"\x01" * 32, 0, scheme).public


def test_keygen_rejects_bad_input():
    with pytest.raises(CryptoError):
        keygen(b"short", 0)
    with pytest.raises(CryptoError):
        keygen(ZERO, 0x10000)
    with pytest.raises(CryptoError):
        keygen(ZERO, 0, "rsa")


@pytest.mark.parametrize("scheme", ["ed25519", "hmac"])
def test_sign_verify(scheme):
    pairs, reg = generate_keys(ZERO, 5, 2, scheme)
    m = vote_payload((b"x",), 0)
    s = sign(pairs[2], m)
    assert verify(reg, s, m)
    tampered = bytes([m[0] ^ 1]) + m[1:]
    assert not verify(reg, s, tampered)
    assert not verify(reg, Signature(3, s.data), m)
    assert not verify(reg, Signature(9, s.data), m)  # unknown signer: False, no exception


def test_keypair_from_secret_roundtrip():
    kp = keygen(ZERO, 4)
    assert keypair_from_secret(4, kp.secret) == kp
    h = keygen(ZERO, 4, "hmac")
    assert keypair_from_secret(4, h.secret, "hmac") == h
    with pytest.raises(CryptoError):
        keypair_from_secret(4, b"\x00" * 31)


def test_registry_invariants():
    pairs, _ = generate_keys(ZERO, 4, 1)
    with pytest.raises(CryptoError):
        PublicRegistry.from_keypairs(pairs, 2)  # n > 2f violated
    weak = PublicRegistry.from_keypairs(pairs, 2, strict=False)
    assert weak.quorum == 3
    with pytest.raises(CryptoError):
        PublicRegistry({0: b"k", 2: b"k"}, 0, "hmac")
    with pytest.raises(CryptoError):
        PublicRegistry.from_keypairs([pairs[0], keygen(ZERO, 1, "hmac")], 0)


def test_vote_payload_examples():
    assert vote_payload((), 3) == bytes.fromhex("01" "0003" "00000000")
    assert vote_payload(entry_set([b"a", b"b"]), 0) == vote_payload(entry_set([b"b", b"a"]), 0)
    assert vote_payload((b"x",), 1) != vote_payload((b"x",), 2)


def test_thread_binding_blocks_replay(hkeys5):
    pairs, reg = hkeys5
    s = sign(pairs[0], vote_payload((b"x",), 1))
    assert verify(reg, s, vote_payload((b"x",), 1))
    assert not verify(reg, s, vote_payload((b"x",), 2))
    # the unbound payload is what makes the replay possible
    assert unbound_vote_payload((b"x",), 1) == unbound_vote_payload((b"x",), 2)


def test_log_sig_payload():
    p = log_sig_payload(bytes(32))
    assert len(p) == 33 and p[0] == 0x02
    assert log_sig_payload(b"\x01" * 32) != p
    with pytest.raises(CryptoError):
        log_sig_payload(bytes(31))


@given(small_sets, ids, small_sets, ids)
def test_vote_payload_injective(x, p, y, q):
    assert (vote_payload(x, p) == vote_payload(y, q)) == (x == y and p == q)


@given(small_sets, ids, st.binary(min_size=32, max_size=32))
def test_domain_separation(x, p, digest):
    assert vote_payload(x, p) != log_sig_payload(digest)
    assert vote_payload(x, p)[0] != log_sig_payload(digest)[0]
