"""Emulated NFC tags.

A tag has a factory-burned UID, a writable payload with the writer's signature
over ``sha256(uid || payload)``, and hardware read/write counters that only go
up. The ``adversary_*`` functions are the physical attack surface.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .codec import decode_fields, encode_fields, sha256, text, u64
from .errors import IndexOutOfRange, TagDisabled, TagLocked
from .keyring import KeyPair, sign, verify

UID_SIZE = 7
NXP_MANUFACTURER = 0x04


@dataclass(frozen=True)
class TagPayload:
    pid: str
    producer: bytes
    vintage: int
    bottling_date: str
    write_count: int

    def encode(self) -> bytes:
        return encode_fields(text(self.pid), self.producer, u64(self.vintage), text(self.bottling_date),
                             u64(self.write_count))

    @classmethod
    def decode(cls, data: bytes) -> TagPayload:
        fields = decode_fields(data)
        if len(fields) != 5 or len(fields[2]) != 8 or len(fields[4]) != 8:
            raise ValueError("malformed tag payload")
        return cls(fields[0].decode("utf-8"), fields[1], int.from_bytes(fields[2], "big"),
                   fields[3].decode("utf-8"), int.from_bytes(fields[4], "big"))

    def pedigree(self) -> dict[str, Any]:
        return {"pid": self.pid, "producer": self.producer.hex(), "vintage": self.vintage,
                "bottling_date": self.bottling_date}


@dataclass
class TagState:
    uid: bytes
    payload: bytes = b""
    signature: bytes = b""
    read_count: int = 0
    write_count: int = 0
    disabled: bool = False
    locked: bool = False

    def to_json(self) -> dict[str, Any]:
        return {"uid": self.uid.hex(), "payload": self.payload.hex(), "signature": self.signature.hex(),
                "read_count": self.read_count, "write_count": self.write_count,
                "disabled": self.disabled, "locked": self.locked}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> TagState:
        uid = bytes.fromhex(obj["uid"])
        if len(uid) != UID_SIZE:
            raise ValueError(f"tag uid must be {UID_SIZE} bytes")
        return cls(uid, bytes.fromhex(obj["payload"]), bytes.fromhex(obj["signature"]),
                   int(obj["read_count"]), int(obj["write_count"]), bool(obj["disabled"]), bool(obj["locked"]))


@dataclass(frozen=True)
class TagRead:
    uid: bytes
    payload: bytes
    signature: bytes
    read_count: int
    write_count: int


class TagFactory:
    """Hands out unique UIDs from a monotonic counter."""

    def __init__(self, forgeable_uid: bool = False, start: int = 1) -> None:
        self.forgeable_uid = forgeable_uid
        self._next = start

    def new_tag(self) -> TagState:
        uid = bytes([NXP_MANUFACTURER]) + self._next.to_bytes(UID_SIZE - 1, "big")
        self._next += 1
        return TagState(uid)


def tag_digest(uid: bytes, payload: bytes) -> bytes:
    return sha256(uid + payload)


def uid_binding_digest(uid: bytes, pid: str) -> bytes:
    return sha256(encode_fields(b"dnas/uid-binding", uid, text(pid)))


def payload_digest(payload: bytes) -> bytes:
    return sha256(payload)


def signature_valid(read: TagRead | TagState, public_key: bytes) -> bool:
    return verify(public_key, tag_digest(read.uid, read.payload), read.signature)


def tag_write(tag: TagState, payload: bytes, signer: KeyPair) -> TagState:
    if tag.disabled:
        raise TagDisabled(tag.uid.hex())
    if tag.locked:
        raise TagLocked(tag.uid.hex())
    tag.signature = sign(signer, tag_digest(tag.uid, payload))
    tag.payload = payload
    tag.write_count += 1
    return tag


def tag_read(tag: TagState) -> TagRead:
    if tag.disabled:
        raise TagDisabled(tag.uid.hex())
    tag.read_count += 1
    return TagRead(tag.uid, tag.payload, tag.signature, tag.read_count, tag.write_count)


def try_read(tag: TagState) -> TagRead | None:
    try:
        return tag_read(tag)
    except TagDisabled:
        return None


def lock(tag: TagState) -> TagState:
    tag.locked = True
    return tag


def adversary_clone(tag: TagState, factory: TagFactory) -> TagState:
    """Copy a readable tag's memory onto a blank tag.

    The blank keeps its own UID unless the factory models forgeable UIDs.
    Counters on the blank start at zero.
    """
    if tag.disabled:
        raise TagDisabled(tag.uid.hex())
    blank = factory.new_tag()
    if factory.forgeable_uid:
        blank.uid = tag.uid
    blank.payload = tag.payload
    blank.signature = tag.signature
    return blank


def adversary_modify(tag: TagState, index: int, new_byte: int) -> TagState:
    """Overwrite one payload byte without re-signing. Counts as a hardware write."""
    if tag.disabled:
        raise TagDisabled(tag.uid.hex())
    if tag.locked:
        raise TagLocked(tag.uid.hex())
    if not 0 <= index < len(tag.payload):
        raise IndexOutOfRange(f"payload byte {index} of {len(tag.payload)}")
    buf = bytearray(tag.payload)
    buf[index] = new_byte & 0xFF
    tag.payload = bytes(buf)
    tag.write_count += 1
    return tag


def adversary_disable(tag: TagState) -> TagState:
    tag.disabled = True
    return tag
