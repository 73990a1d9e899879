import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from logres.crypto import Signature, generate_keys, log_sig_payload, sign
from logres.entries import EncodingError, entry_set
from logres.log import (
    GENESIS,
    ZERO_DIGEST,
    Log,
    LogCertificate,
    Reason,
    decode_certificate,
    decode_log,
    encode_certificate,
    encode_log,
    mk_digest,
    mk_log,
    validate_certificate,
)

NOW = 1_700_000_000_000
PERIOD = 60_000

# frozen from a hand-packed encoding hashed with hashlib.sha256
GENESIS_DIGEST = "021a90eea4c0362b7e96ff34f6b917ac92421235ed34b5784ff258f2726833d6"
SAMPLE_DIGEST = "38cf9c1d59533d4e46c82d7937e3fdf72de96cb1c0a45a385974d914215f438f"


def certificate(pairs, log, signers):
    h = mk_digest(log)
    return LogCertificate(log, tuple(sign(pairs[i], log_sig_payload(h)) for i in signers))


def test_golden_digests():
    assert mk_digest(GENESIS).hex() == GENESIS_DIGEST
    sample = Log(1, ZERO_DIGEST, (b"a", b"bc"), NOW + PERIOD)
    assert mk_digest(sample).hex() == SAMPLE_DIGEST
    raw = encode_log(sample)
    assert raw[0] == 0x03
    assert raw[1:17] == struct.pack(">QQ", 1, NOW + PERIOD)


def test_mk_log_examples():
    base = mk_log(GENESIS, (b"a",), PERIOD, NOW)
    same = mk_log(base, (), PERIOD, NOW + 1)
    assert same.entries == base.entries and same.epoch == base.epoch + 1
    assert same.prev_digest == mk_digest(base)
    assert same.expiration == NOW + 1 + PERIOD
    assert mk_log(GENESIS, entry_set([b"b", b"a"]), PERIOD, NOW).entries == (b"a", b"b")
    again = mk_log(base, (b"a", b"c"), PERIOD, NOW)
    assert again.entries == tuple(sorted({b"a"} | {b"a", b"c"}))


def test_digest_sensitivity():
    lg = mk_log(GENESIS, (b"a", b"b"), PERIOD, NOW)
    assert mk_digest(lg) == mk_digest(mk_log(GENESIS, entry_set([b"b", b"a"]), PERIOD, NOW))
    shifted = Log(lg.epoch, lg.prev_digest, lg.entries, lg.expiration + 1)
    assert mk_digest(shifted) != mk_digest(lg)


@given(st.lists(st.binary(min_size=1, max_size=6), max_size=6), st.integers(0, 2**40))
def test_mk_log_deterministic_and_roundtrips(xs, now):
    a = mk_log(GENESIS, entry_set(xs), PERIOD, now)
    b = mk_log(GENESIS, entry_set(xs), PERIOD, now)
    assert a == b and mk_digest(a) == mk_digest(b)
    raw = encode_log(a)
    assert decode_log(raw) == (a, len(raw))


def test_validate_certificate_reasons(keys5):
    pairs, reg = keys5
    lg = mk_log(GENESIS, (b"a",), PERIOD, NOW)
    assert validate_certificate(certificate(pairs, lg, [0, 1, 2]), reg, NOW)
    assert validate_certificate(certificate(pairs, lg, [0, 1]), reg, NOW).reason is Reason.INSUFFICIENT_SIGS
    dup = certificate(pairs, lg, [0, 1, 1])
    assert validate_certificate(dup, reg, NOW).reason is Reason.DUPLICATE_SIGNER
    expired = validate_certificate(certificate(pairs, lg, [0, 1, 2]), reg, lg.expiration)
    assert expired.reason is Reason.EXPIRED
    forged = certificate(pairs, lg, [0, 1, 2])
    bad = LogCertificate(lg, forged.sigs[:2] + (Signature(2, forged.sigs[0].data),))
    assert validate_certificate(bad, reg, NOW).reason is Reason.BAD_SIG
    other = mk_log(GENESIS, (b"b",), PERIOD, NOW)
    assert not validate_certificate(LogCertificate(other, forged.sigs), reg, NOW)


def test_certificate_encoding_roundtrip(keys5):
    pairs, _ = keys5
    cert = certificate(pairs, mk_log(GENESIS, (b"a", b"b"), PERIOD, NOW), [4, 0, 2])
    assert decode_certificate(encode_certificate(cert)) == cert
    with pytest.raises(EncodingError):
        decode_certificate(encode_certificate(cert)[:-1])
    with pytest.raises(EncodingError):
        decode_certificate(encode_certificate(cert) + b"\x00")
