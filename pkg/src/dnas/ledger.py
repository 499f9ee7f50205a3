"""Blocks, chains and Merkle commitments.

Merkle rule: leaves are transaction digests, parents are ``sha256(left || right)``
and a layer with an odd count duplicates its last node. A single leaf is
therefore paired with itself, so every tree has at least one internal level.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

from .codec import ZERO_DIGEST, canonical_json, encode_fields, sha256, u64, u256, unhex
from .errors import (DuplicateTransaction, EmptyBlock, GasLimitExceeded, HeightGap, IndexOutOfRange,
                     MerkleMismatch, ParentMismatch)
from .transaction import Transaction


@dataclass(frozen=True)
class BlockHeader:
    height: int
    parent_hash: bytes
    merkle_root: bytes
    state_root: bytes
    timestamp: int
    nonce: int = 0
    difficulty: int = 0
    proposer: bytes = b""

    def encode(self) -> bytes:
        return encode_fields(u64(self.height), self.parent_hash, self.merkle_root, self.state_root,
                             u64(self.timestamp), u64(self.nonce), u256(self.difficulty), self.proposer)

    def digest(self) -> bytes:
        return hash_header(self)

    def to_json(self) -> dict[str, Any]:
        return {
            "height": self.height,
            "parent_hash": self.parent_hash.hex(),
            "merkle_root": self.merkle_root.hex(),
            "state_root": self.state_root.hex(),
            "timestamp": self.timestamp,
            "nonce": self.nonce,
            "difficulty": format(self.difficulty, "064x"),
            "proposer": self.proposer.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> BlockHeader:
        return cls(
            height=int(obj["height"]),
            parent_hash=unhex(obj["parent_hash"]),
            merkle_root=unhex(obj["merkle_root"]),
            state_root=unhex(obj["state_root"]),
            timestamp=int(obj["timestamp"]),
            nonce=int(obj["nonce"]),
            difficulty=int(obj["difficulty"], 16),
            proposer=unhex(obj["proposer"]),
        )


def hash_header(header: BlockHeader) -> bytes:
    return sha256(header.encode())


@dataclass(frozen=True)
class Vote:
    validator: bytes
    signature: bytes

    def to_json(self) -> dict[str, str]:
        return {"validator": self.validator.hex(), "signature": self.signature.hex()}

    @classmethod
    def from_json(cls, obj: dict[str, str]) -> Vote:
        return cls(unhex(obj["validator"]), unhex(obj["signature"]))


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    body: tuple[Transaction, ...] = ()
    votes: tuple[Vote, ...] = ()

    @property
    def height(self) -> int:
        return self.header.height

    def digest(self) -> bytes:
        return hash_header(self.header)

    def tx_digests(self) -> list[bytes]:
        return [tx.digest() for tx in self.body]

    def gas_reserved(self) -> int:
        return sum(tx.gas_limit for tx in self.body)

    def to_json(self) -> dict[str, Any]:
        return {
            "header": self.header.to_json(),
            "hash": self.digest().hex(),
            "body": [tx.to_json() for tx in self.body],
            "votes": [v.to_json() for v in self.votes],
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> Block:
        return cls(
            header=BlockHeader.from_json(obj["header"]),
            body=tuple(Transaction.from_json(t) for t in obj["body"]),
            votes=tuple(Vote.from_json(v) for v in obj["votes"]),
        )


def body_root(body: Sequence[Transaction]) -> bytes:
    """Merkle root of a block body; an empty body commits to the zero digest."""
    if not body:
        return ZERO_DIGEST
    return merkle_root([tx.digest() for tx in body])


# Merkle -----------------------------------------------------------------------

class Side(str, enum.Enum):
    LEFT = "L"   # sibling is the left operand
    RIGHT = "R"  # sibling is the right operand


@dataclass(frozen=True)
class MerkleProof:
    leaf_digest: bytes
    path: tuple[tuple[bytes, Side], ...]
    root: bytes


def _parent(left: bytes, right: bytes) -> bytes:
    return sha256(left + right)


def _next_layer(layer: list[bytes]) -> list[bytes]:
    if len(layer) % 2:
        layer = layer + [layer[-1]]
    return [_parent(layer[i], layer[i + 1]) for i in range(0, len(layer), 2)]


def merkle_root(tx_digests: Sequence[bytes]) -> bytes:
    if not tx_digests:
        raise EmptyBlock("Merkle root of an empty list")
    layer = _next_layer(list(tx_digests))
    while len(layer) > 1:
        layer = _next_layer(layer)
    return layer[0]


def build_proof(tx_digests: Sequence[bytes], index: int) -> MerkleProof:
    if not 0 <= index < len(tx_digests):
        raise IndexOutOfRange(f"leaf {index} not in [0, {len(tx_digests)})")
    layer = list(tx_digests)
    leaf = layer[index]
    path = []
    idx = index
    while True:
        padded = layer + [layer[-1]] if len(layer) % 2 else layer
        if idx % 2 == 0:
            path.append((padded[idx + 1], Side.RIGHT))
        else:
            path.append((padded[idx - 1], Side.LEFT))
        layer = _next_layer(layer)
        idx //= 2
        if len(layer) == 1:
            break
    return MerkleProof(leaf, tuple(path), layer[0])


def merkle_prove(tx_index: int, block: Block) -> MerkleProof:
    if not 0 <= tx_index < len(block.body):
        raise IndexOutOfRange(f"tx {tx_index} not in block of {len(block.body)}")
    proof = build_proof(block.tx_digests(), tx_index)
    return replace(proof, root=block.header.merkle_root)


def verify_proof(proof: MerkleProof) -> bool:
    node = proof.leaf_digest
    for sibling, side in proof.path:
        if side is Side.RIGHT:
            node = _parent(node, sibling)
        elif side is Side.LEFT:
            node = _parent(sibling, node)
        else:
            return False
    return bool(proof.path) and node == proof.root


# Chain ----------------------------------------------------------------------------

@dataclass
class Chain:
    """Finalized block sequence. ``genesis_alloc`` is the JSON-able initial state."""

    blocks: list[Block]
    block_gas_limit: int
    genesis_alloc: dict[str, Any] = field(default_factory=dict)

    @property
    def tip(self) -> bytes:
        return self.blocks[-1].digest()

    @property
    def tip_header(self) -> BlockHeader:
        return self.blocks[-1].header

    @property
    def height(self) -> int:
        return self.blocks[-1].height

    def __len__(self) -> int:
        return len(self.blocks)

    def append(self, block: Block) -> Chain:
        return append_block(self, block)


def make_genesis(state_root: bytes, timestamp: int = 0) -> Block:
    return Block(BlockHeader(0, ZERO_DIGEST, ZERO_DIGEST, state_root, timestamp))


def check_block_shape(block: Block, block_gas_limit: int) -> None:
    """Checks that need only the block itself: gas budget, duplicates, Merkle root."""
    if block.gas_reserved() > block_gas_limit:
        raise GasLimitExceeded(f"block {block.height}: gas {block.gas_reserved()} > {block_gas_limit}")
    digests = block.tx_digests()
    if len(set(digests)) != len(digests):
        raise DuplicateTransaction(f"block {block.height} repeats a transaction")
    root = merkle_root(digests) if digests else ZERO_DIGEST
    if root != block.header.merkle_root:
        raise MerkleMismatch(f"block {block.height}: body does not match header merkle_root")


def append_block(chain: Chain, block: Block) -> Chain:
    if block.header.parent_hash != chain.tip:
        raise ParentMismatch(f"block {block.height} does not extend tip {chain.tip.hex()[:16]}")
    if block.height != chain.height + 1:
        raise HeightGap(f"expected height {chain.height + 1}, got {block.height}")
    check_block_shape(block, chain.block_gas_limit)
    chain.blocks.append(block)
    return chain


@dataclass(frozen=True)
class ChainReport:
    ok: bool
    first_bad: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def validate_chain(chain: Chain, *, check_pow: bool = True) -> ChainReport:
    """Re-check every link, height and Merkle root from genesis.

    Returns a falsy report naming the first offending block index.
    """
    if not chain.blocks:
        return ChainReport(False, 0, "empty chain")
    genesis = chain.blocks[0].header
    if genesis.height != 0 or genesis.parent_hash != ZERO_DIGEST:
        return ChainReport(False, 0, "bad genesis")
    prev = None
    for i, block in enumerate(chain.blocks):
        if block.height != i:
            return ChainReport(False, i, "HeightGap")
        if prev is not None and block.header.parent_hash != prev.digest():
            return ChainReport(False, i, "ParentMismatch")
        try:
            check_block_shape(block, chain.block_gas_limit)
        except (GasLimitExceeded, DuplicateTransaction, MerkleMismatch) as exc:
            return ChainReport(False, i, exc.code)
        if check_pow and block.header.difficulty and int.from_bytes(block.digest(), "big") >= block.header.difficulty:
            return ChainReport(False, i, "PowTargetMissed")
        prev = block
    return ChainReport(True)


# Dump format ---------------------------------------------------------------------
# One canonical JSON object per line (keys sorted, digests lowercase hex). The
# first line is genesis and additionally carries "alloc" and "block_gas_limit".

def chain_lines(chain: Chain) -> Iterable[str]:
    for block in chain.blocks:
        obj = block.to_json()
        if block.height == 0:
            obj["alloc"] = chain.genesis_alloc
            obj["block_gas_limit"] = chain.block_gas_limit
        yield canonical_json(obj)


def dump_chain(chain: Chain) -> str:
    return "".join(line + "\n" for line in chain_lines(chain))


def load_chain(text: str) -> Chain:
    blocks = []
    alloc: dict[str, Any] = {}
    gas_limit = 0
    for n, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        obj = json.loads(line)
        if n == 0:
            alloc = obj.get("alloc", {})
            gas_limit = int(obj.get("block_gas_limit", 0))
        blocks.append(Block.from_json(obj))
    return Chain(blocks, gas_limit, alloc)


def write_chain(path: str | Path, chain: Chain) -> None:
    Path(path).write_text(dump_chain(chain))


def read_chain(path: str | Path) -> Chain:
    return load_chain(Path(path).read_text())
