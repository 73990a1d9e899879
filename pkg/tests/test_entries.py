import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from logres.entries import (
    EncodingError,
    decode_entry_set,
    encode_entry_set,
    entry_set,
    is_canonical,
    short,
    union,
)

entries = st.lists(st.binary(min_size=1, max_size=12), max_size=8)


def test_canonical_order_and_dedupe():
    assert entry_set([b"b", b"a", b"b"]) == (b"a", b"b")
    assert is_canonical((b"a", b"b"))
    assert not is_canonical((b"b", b"a"))
    assert not is_canonical((b"a", b"a"))


def test_empty_entry_rejected():
    with pytest.raises(ValueError):
        entry_set([b"", b"x"])


def test_golden_encoding():
    assert encode_entry_set(()) == b"\x00\x00\x00\x00"
    assert encode_entry_set((b"a", b"bc")).hex() == "00000002" "00000001" "61" "00000002" "6263"


def test_decode_rejects_non_canonical():
    raw = struct.pack(">I", 2) + struct.pack(">I", 1) + b"b" + struct.pack(">I", 1) + b"a"
    with pytest.raises(EncodingError):
        decode_entry_set(raw)


def test_decode_rejects_truncation():
    raw = encode_entry_set((b"abc",))
    for cut in range(1, len(raw)):
        with pytest.raises(EncodingError):
            decode_entry_set(raw[:cut])


@given(entries)
def test_roundtrip(xs):
    x = entry_set(xs)
    raw = encode_entry_set(x)
    assert decode_entry_set(raw) == (x, len(raw))


@given(entries, entries)
def test_union_matches_set_oracle(a, b):
    assert union(entry_set(a), entry_set(b)) == tuple(sorted(set(a) | set(b)))


def test_short_rendering():
    assert short((b"a", b"b", b"c", b"d")) == "{a,b,c,...+1}"
