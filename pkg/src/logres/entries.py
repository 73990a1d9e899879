"""Entries and canonical entry sets.

An entry set is kept as a tuple of ``bytes`` in strictly increasing byte order,
which makes it hashable, comparable and directly encodable.
"""

from __future__ import annotations

import struct
from functools import lru_cache
from typing import Iterable

Entry = bytes
EntrySet = tuple[bytes, ...]

EMPTY: EntrySet = ()

DEFAULT_MAX_ENTRY_SIZE = 4096
HARD_MAX_ENTRY_SIZE = 65535


class EncodingError(ValueError):
    """Raised when bytes do not match a canonical encoding."""


def entry_set(entries: Iterable[bytes]) -> EntrySet:
    """Return the canonical (sorted, duplicate-free) form of ``entries``."""
    out = tuple(sorted({bytes(e) for e in entries}))
    if out and not out[0]:
        raise ValueError("entries must be non-empty byte strings")
    return out


def is_canonical(x: EntrySet) -> bool:
    return all(a < b for a, b in zip(x, x[1:])) and all(x)


def union(*sets: EntrySet) -> EntrySet:
    merged: set[bytes] = set()
    for s in sets:
        merged.update(s)
    return tuple(sorted(merged))


@lru_cache(maxsize=512)
def encode_entry_set(x: EntrySet) -> bytes:
    """count(u32) followed by length-prefixed (u32) entries, big-endian."""
    parts = [struct.pack(">I", len(x))]
    for e in x:
        parts.append(struct.pack(">I", len(e)))
        parts.append(e)
    return b"".join(parts)


def decode_entry_set(buf: bytes | memoryview, offset: int = 0) -> tuple[EntrySet, int]:
    """Decode an entry set at ``offset``; return it and the offset past it."""
    buf = memoryview(buf)
    try:
        (count,) = struct.unpack_from(">I", buf, offset)
        offset += 4
        out = []
        for _ in range(count):
            (size,) = struct.unpack_from(">I", buf, offset)
            offset += 4
            if offset + size > len(buf):
                raise EncodingError("truncated entry")
            out.append(bytes(buf[offset:offset + size]))
            offset += size
    except struct.error as exc:
        raise EncodingError(str(exc)) from exc
    x = tuple(out)
    if not is_canonical(x):
        raise EncodingError("entry set is not canonical")
    return x, offset


def short(x: EntrySet, limit: int = 3) -> str:
    """Human-readable rendering used in diagnostics and trace dumps."""
    shown = [e[:12].decode("utf-8", "replace") for e in x[:limit]]
    if len(x) > limit:
        shown.append(f"...+{len(x) - limit}")
    return "{" + ",".join(shown) + "}"
