"""Canonical byte and JSON encodings.

Every digest in the package is computed over the output of :func:`encode_fields`:
each field is written as a 4-byte big-endian length followed by the field bytes,
in declared field order. Integers are fixed-width big-endian (8 bytes, or 32 for
256-bit values); strings are UTF-8.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def u64(value: int) -> bytes:
    return int(value).to_bytes(8, "big")


def u256(value: int) -> bytes:
    return int(value).to_bytes(32, "big")


def text(value: str) -> bytes:
    return value.encode("utf-8")


def encode_fields(*fields: bytes) -> bytes:
    return b"".join(len(f).to_bytes(4, "big") + f for f in fields)


def decode_fields(data: bytes) -> list[bytes]:
    """Inverse of :func:`encode_fields`. Raises ValueError on truncated input."""
    out = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ValueError("truncated length prefix")
        n = int.from_bytes(data[pos:pos + 4], "big")
        pos += 4
        if pos + n > len(data):
            raise ValueError("truncated field")
        out.append(data[pos:pos + n])
        pos += n
    return out


def hx(data: bytes) -> str:
    return data.hex()


def unhex(value: str) -> bytes:
    try:
        return bytes.fromhex(value)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"bad hex: {value!r}") from exc


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def canonical_bytes(obj: Any) -> bytes:
    return canonical_json(obj).encode("ascii")
