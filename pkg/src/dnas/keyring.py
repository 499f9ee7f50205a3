"""Key generation, signing, address derivation and the rotation registry.

Signatures are Ed25519 (deterministic, RFC 8032) over 32-byte SHA-256 message
digests. Private keys are derived from the keyring seed, the entity id and a
per-entity generation counter, so a seed fully determines every address.
"""

from __future__ import annotations

import base64
import enum
import json
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from cryptography.exceptions import InvalidSignature as _CryptoInvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .codec import encode_fields, sha256, text, u64
from .errors import KeyNotActive, Unauthorized, UnknownEntity

ADDRESS_SIZE = 20


class KeyStatus(str, enum.Enum):
    ACTIVE = "Active"
    RETIRED = "Retired"
    COMPROMISED = "Compromised"


def address_of(public_key: bytes) -> bytes:
    return sha256(public_key)[:ADDRESS_SIZE]


@dataclass
class KeyPair:
    entity: str
    private_key: bytes = field(repr=False)
    public_key: bytes
    created_at: int
    status: KeyStatus = KeyStatus.ACTIVE

    def __post_init__(self) -> None:
        self._signer = Ed25519PrivateKey.from_private_bytes(self.private_key)

    @property
    def address(self) -> bytes:
        return address_of(self.public_key)

    @classmethod
    def from_private(cls, entity: str, private_key: bytes, created_at: int = 0,
                     status: KeyStatus = KeyStatus.ACTIVE) -> KeyPair:
        public = Ed25519PrivateKey.from_private_bytes(private_key).public_key().public_bytes(
            Encoding.Raw, PublicFormat.Raw)
        return cls(entity, private_key, public, created_at, status)


def sign(key: KeyPair, message: bytes) -> bytes:
    if key.status is not KeyStatus.ACTIVE:
        raise KeyNotActive(f"{key.entity}: key is {key.status.value}")
    return key._signer.sign(message)


@lru_cache(maxsize=1 << 16)
def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    # Pure function of its arguments, so memoising is safe; many simulated nodes
    # verify the same signature.
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (_CryptoInvalidSignature, ValueError):
        return False
    return True


def derive_private(seed: int, entity: str, generation: int) -> bytes:
    return sha256(encode_fields(b"dnas/key", u64(seed & (2**64 - 1)), text(entity), u64(generation)))


@dataclass(frozen=True)
class RotationRecord:
    entity: str
    address: bytes
    height: int
    admin: str
    admin_signature: bytes


@dataclass(frozen=True)
class RotationAuthorization:
    admin: str
    signature: bytes


def rotation_message(entity: str, height: int) -> bytes:
    return sha256(encode_fields(b"dnas/rotate", text(entity), u64(height)))


class RotationRegistry:
    """Append-only entity -> [(address, activation height)] pointer history."""

    def __init__(self) -> None:
        self._history: dict[str, list[tuple[bytes, int]]] = {}
        self.records: list[RotationRecord] = []
        self._status: dict[bytes, KeyStatus] = {}

    def bind(self, entity: str, public_key: bytes, height: int) -> None:
        self._history.setdefault(entity, []).append((address_of(public_key), height))
        self._status[public_key] = KeyStatus.ACTIVE

    def set_status(self, public_key: bytes, status: KeyStatus) -> None:
        self._status[public_key] = status

    def status_of(self, public_key: bytes) -> KeyStatus | None:
        return self._status.get(public_key)

    def history(self, entity: str) -> list[tuple[bytes, int]]:
        if entity not in self._history:
            raise UnknownEntity(entity)
        return list(self._history[entity])

    def current_address(self, entity: str) -> bytes:
        return self.history(entity)[-1][0]

    def address_at(self, entity: str, height: int) -> bytes:
        chosen = None
        for address, activated in self.history(entity):
            if activated <= height:
                chosen = address
        if chosen is None:
            raise UnknownEntity(f"{entity} had no key at height {height}")
        return chosen

    def __contains__(self, entity: str) -> bool:
        return entity in self._history


class Keyring:
    """Per-simulation key manager: one Active key per entity at any instant."""

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self.keys: dict[str, list[KeyPair]] = {}
        self.admins: set[str] = set()
        self.registry = RotationRegistry()

    def generate(self, entity: str, sim_time: int = 0, *, admin: bool = False) -> KeyPair:
        generation = len(self.keys.get(entity, []))
        for old in self.keys.get(entity, []):
            if old.status is KeyStatus.ACTIVE:
                old.status = KeyStatus.RETIRED
                self.registry.set_status(old.public_key, KeyStatus.RETIRED)
        key = KeyPair.from_private(entity, derive_private(self.seed, entity, generation), sim_time)
        self.keys.setdefault(entity, []).append(key)
        self.registry.bind(entity, key.public_key, sim_time)
        if admin:
            self.admins.add(entity)
        return key

    def active(self, entity: str) -> KeyPair:
        for key in reversed(self.keys.get(entity, [])):
            if key.status is KeyStatus.ACTIVE:
                return key
        if entity not in self.keys:
            raise UnknownEntity(entity)
        raise KeyNotActive(f"{entity} has no active key")

    def latest(self, entity: str) -> KeyPair:
        if entity not in self.keys:
            raise UnknownEntity(entity)
        return self.keys[entity][-1]

    def authorize_rotation(self, admin: str, entity: str, height: int) -> RotationAuthorization:
        return RotationAuthorization(admin, sign(self.active(admin), rotation_message(entity, height)))

    def rotate(self, entity: str, authorization: RotationAuthorization | None, height: int) -> KeyPair:
        """Retire the entity's current key and activate a fresh one.

        The authorization must be a signature over ``(entity, height)`` by the
        active key of a registered administrator.
        """
        if entity not in self.keys:
            raise UnknownEntity(entity)
        if authorization is None or authorization.admin not in self.admins:
            raise Unauthorized("rotation requires administrator co-signature")
        admin_key = self.active(authorization.admin)
        if not verify(admin_key.public_key, rotation_message(entity, height), authorization.signature):
            raise Unauthorized("administrator signature does not verify")
        key = self.generate(entity, height)
        self.registry.records.append(
            RotationRecord(entity, key.address, height, authorization.admin, authorization.signature))
        return key

    def mark_compromised(self, entity: str, height: int) -> KeyPair:
        if entity not in self.keys:
            raise UnknownEntity(entity)
        key = self.keys[entity][-1]
        key.status = KeyStatus.COMPROMISED
        self.registry.set_status(key.public_key, KeyStatus.COMPROMISED)
        return key

    def is_admissible(self, public_key: bytes) -> bool:
        return self.registry.status_of(public_key) is not KeyStatus.COMPROMISED

    def entity_of(self, address: bytes) -> str | None:
        for entity, keys in self.keys.items():
            if any(k.address == address for k in keys):
                return entity
        return None


# keystore files ----------------------------------------------------------------

KEYSTORE_VERSION = 1


def _kdf(passphrase: str, salt: bytes) -> bytes:
    return Scrypt(salt=salt, length=32, n=2**14, r=8, p=1).derive(passphrase.encode("utf-8"))


def keystore_document(keys: list[KeyPair], passphrase: str | None = None, *, admin: bool = False) -> dict:
    entries = []
    for key in keys:
        entry = {
            "public_key": key.public_key.hex(),
            "address": key.address.hex(),
            "created_at": key.created_at,
            "status": key.status.value,
        }
        if passphrase is None:
            entry["private_key"] = key.private_key.hex()
        else:
            salt, nonce = os.urandom(16), os.urandom(12)
            sealed = AESGCM(_kdf(passphrase, salt)).encrypt(nonce, key.private_key, key.public_key)
            entry["encrypted_private_key"] = {
                "kdf": "scrypt", "cipher": "aes-256-gcm",
                "salt": salt.hex(), "nonce": nonce.hex(),
                "ciphertext": base64.b64encode(sealed).decode("ascii"),
            }
        entries.append(entry)
    entity = keys[0].entity if keys else ""
    return {"version": KEYSTORE_VERSION, "entity": entity, "admin": admin, "keys": entries}


def save_keystore(path: str | os.PathLike, keys: list[KeyPair], passphrase: str | None = None, *,
                  admin: bool = False) -> None:
    doc = keystore_document(keys, passphrase, admin=admin)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def keystore_is_admin(path: str | os.PathLike) -> bool:
    return bool(json.loads(Path(path).read_text()).get("admin", False))


def load_keystore(path: str | os.PathLike, passphrase: str | None = None) -> list[KeyPair]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != KEYSTORE_VERSION:
        raise ValueError(f"unsupported keystore version {doc.get('version')!r}")
    keys = []
    for entry in doc["keys"]:
        public = bytes.fromhex(entry["public_key"])
        if "private_key" in entry:
            private = bytes.fromhex(entry["private_key"])
        else:
            if passphrase is None:
                raise ValueError("keystore is encrypted; passphrase required")
            enc = entry["encrypted_private_key"]
            key = _kdf(passphrase, bytes.fromhex(enc["salt"]))
            private = AESGCM(key).decrypt(bytes.fromhex(enc["nonce"]),
                                          base64.b64decode(enc["ciphertext"]), public)
        pair = KeyPair.from_private(doc["entity"], private, entry["created_at"], KeyStatus(entry["status"]))
        if pair.public_key != public:
            raise ValueError("keystore public key does not match private key")
        keys.append(pair)
    return keys
