from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Any

from .codec import canonical_bytes, encode_fields, sha256, text, u64, unhex
from .keyring import KeyPair, address_of, sign, verify


@dataclass(frozen=True)
class Transaction:
    """A signed invocation of one registry method.

    ``public_key`` travels with the transaction because Ed25519 has no key
    recovery; the sender address must equal ``address_of(public_key)``.
    """

    sender: bytes
    public_key: bytes
    nonce: int
    method: str
    params: bytes
    gas_limit: int
    gas_price: int
    signature: bytes = b""

    def signing_payload(self) -> bytes:
        return encode_fields(self.sender, self.public_key, u64(self.nonce), text(self.method),
                             self.params, u64(self.gas_limit), u64(self.gas_price))

    @cached_property
    def _signing_digest(self) -> bytes:
        return sha256(self.signing_payload())

    @cached_property
    def _digest(self) -> bytes:
        return sha256(self.signing_payload() + encode_fields(self.signature))

    def signing_digest(self) -> bytes:
        return self._signing_digest

    def digest(self) -> bytes:
        """Transaction hash; this is the Merkle leaf."""
        return self._digest

    def signature_valid(self) -> bool:
        return (address_of(self.public_key) == self.sender
                and verify(self.public_key, self.signing_digest(), self.signature))

    def decoded_params(self) -> dict[str, Any]:
        return json.loads(self.params.decode("ascii"))

    def to_json(self) -> dict[str, Any]:
        return {
            "sender": self.sender.hex(),
            "public_key": self.public_key.hex(),
            "nonce": self.nonce,
            "method": self.method,
            "params": self.params.hex(),
            "gas_limit": self.gas_limit,
            "gas_price": self.gas_price,
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> Transaction:
        return cls(
            sender=unhex(obj["sender"]),
            public_key=unhex(obj["public_key"]),
            nonce=int(obj["nonce"]),
            method=str(obj["method"]),
            params=unhex(obj["params"]),
            gas_limit=int(obj["gas_limit"]),
            gas_price=int(obj["gas_price"]),
            signature=unhex(obj["signature"]),
        )


def encode_params(params: dict[str, Any]) -> bytes:
    return canonical_bytes(params)


def make_transaction(key: KeyPair, nonce: int, method: str, params: dict[str, Any], *,
                     gas_limit: int, gas_price: int = 1) -> Transaction:
    unsigned = Transaction(key.address, key.public_key, nonce, method, encode_params(params),
                           gas_limit, gas_price)
    return replace(unsigned, signature=sign(key, unsigned.signing_digest()))
