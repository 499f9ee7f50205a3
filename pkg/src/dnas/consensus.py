"""Round-robin Proof-of-Authority with a 2/3+1 quorum, plus a toy Proof-of-Work."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .errors import (BadNonce, BadSignature, GasLimitTooHigh, InvalidSignature, KeyCompromised, KnownTransaction,
                     NonceSpaceExhausted, NotYourTurn, TransactionRejected)
from .keyring import KeyPair, address_of, sign, verify
from .ledger import Block, BlockHeader, Vote, body_root, hash_header
from .registry import Receipt, RegistryState
from .transaction import Transaction

DEFAULT_BLOCK_TIME = 12


@dataclass(frozen=True)
class ValidatorSet:
    validators: tuple[bytes, ...]
    public_keys: tuple[bytes, ...]

    def __post_init__(self) -> None:
        if not self.validators:
            raise ValueError("validator set must be non-empty")
        if len(set(self.validators)) != len(self.validators):
            raise ValueError("validator addresses must be unique")
        if len(self.public_keys) != len(self.validators):
            raise ValueError("one public key per validator")
        for addr, pub in zip(self.validators, self.public_keys):
            if address_of(pub) != addr:
                raise ValueError(f"public key does not match validator {addr.hex()}")

    @classmethod
    def from_keys(cls, keys: Iterable[KeyPair]) -> ValidatorSet:
        keys = list(keys)
        return cls(tuple(k.address for k in keys), tuple(k.public_key for k in keys))

    @property
    def quorum(self) -> int:
        return (2 * len(self.validators)) // 3 + 1

    def proposer_for(self, round_: int) -> bytes:
        return self.validators[round_ % len(self.validators)]

    def public_key(self, address: bytes) -> bytes | None:
        try:
            return self.public_keys[self.validators.index(address)]
        except ValueError:
            return None

    def __len__(self) -> int:
        return len(self.validators)

    def to_json(self) -> list[dict[str, str]]:
        return [{"address": a.hex(), "public_key": p.hex()} for a, p in zip(self.validators, self.public_keys)]

    @classmethod
    def from_json(cls, entries: Sequence[dict[str, str]]) -> ValidatorSet:
        return cls(tuple(bytes.fromhex(e["address"]) for e in entries),
                   tuple(bytes.fromhex(e["public_key"]) for e in entries))


# Transaction pool ------------------------------------------------------------------

def priority(tx: Transaction) -> tuple[int, int, bytes]:
    """Packing order: higher gas price, then lower sender nonce, then tx digest."""
    return (-tx.gas_price, tx.nonce, tx.digest())


@dataclass
class TxPool:
    block_gas_limit: int
    txs: dict[bytes, Transaction] = field(default_factory=dict)
    seen: set[bytes] = field(default_factory=set)  # digests already finalized

    def admit(self, tx: Transaction, state: RegistryState, key_ok: bool = True) -> bytes:
        """Admission checks; raises a TransactionRejected subclass."""
        digest = tx.digest()
        if digest in self.txs:
            raise KnownTransaction(digest.hex())
        if tx.gas_limit > self.block_gas_limit:
            raise GasLimitTooHigh(f"{tx.gas_limit} > block limit {self.block_gas_limit}")
        if not tx.signature_valid():
            raise BadSignature(digest.hex())
        if not key_ok:
            raise KeyCompromised(tx.sender.hex())
        if tx.nonce < state.nonce_of(tx.sender):
            raise BadNonce(f"nonce {tx.nonce} already used (account at {state.nonce_of(tx.sender)})")
        if digest in self.seen:  # included earlier but failed, so the nonce never advanced
            raise KnownTransaction(digest.hex())
        self.txs[digest] = tx
        return digest

    def remove_finalized(self, block: Block, state: RegistryState) -> list[bytes]:
        """Drop included and now-stale transactions; returns digests of stale drops."""
        for tx in block.body:
            d = tx.digest()
            self.seen.add(d)
            self.txs.pop(d, None)
        stale = [d for d, tx in self.txs.items() if tx.nonce < state.nonce_of(tx.sender)]
        for d in stale:
            del self.txs[d]
        return stale

    def __len__(self) -> int:
        return len(self.txs)

    def __contains__(self, digest: bytes) -> bool:
        return digest in self.txs


@dataclass
class Proposal:
    block: Block
    receipts: list[Receipt]
    dropped: list[tuple[bytes, str]]


def select_transactions(pool: Iterable[Transaction], state: RegistryState, gas_limit: int,
                        height: int = 0) -> tuple[list[Transaction], list[Receipt], list[tuple[bytes, str]],
                                              RegistryState]:
    """Greedy packing on a scratch copy of ``state``.

    Repeatedly takes the best-priority transaction whose nonce is the sender's
    next nonce and whose gas limit still fits. Transactions with a future nonce
    wait for their sender's nonce to advance.
    """
    scratch = state.copy()
    heap = [(priority(tx), tx) for tx in pool]
    heapq.heapify(heap)
    waiting: dict[bytes, list[tuple[tuple, Transaction]]] = {}
    chosen: list[Transaction] = []
    receipts: list[Receipt] = []
    dropped: list[tuple[bytes, str]] = []
    remaining = gas_limit
    n_events = 0
    while heap:
        prio, tx = heapq.heappop(heap)
        expected = scratch.nonce_of(tx.sender)
        if tx.nonce > expected:
            waiting.setdefault(tx.sender, []).append((prio, tx))
            continue
        if tx.nonce < expected:
            dropped.append((tx.digest(), BadNonce.__name__))
            continue
        if tx.gas_limit > remaining:
            continue
        try:
            receipt = scratch.execute_transaction(tx, height, len(chosen), n_events)
        except TransactionRejected as exc:
            dropped.append((tx.digest(), exc.code))
            continue
        chosen.append(tx)
        receipts.append(receipt)
        n_events += len(receipt.events)
        remaining -= tx.gas_limit
        if receipt.ok and tx.sender in waiting:
            for item in waiting.pop(tx.sender):
                heapq.heappush(heap, item)
    return chosen, receipts, dropped, scratch


def propose_block(pending: Iterable[Transaction], parent: BlockHeader, proposer: bytes, round_: int,
                  validators: ValidatorSet, state: RegistryState, *, timestamp: int | None = None,
                  block_gas_limit: int | None = None) -> Proposal:
    """Build the next block for ``round_``; an empty pool yields an empty block."""
    if validators.proposer_for(round_) != proposer:
        raise NotYourTurn(f"round {round_} belongs to {validators.proposer_for(round_).hex()}")
    height = parent.height + 1
    limit = state.gas.block_gas_limit if block_gas_limit is None else block_gas_limit
    chosen, receipts, dropped, scratch = select_transactions(pending, state, limit, height)
    header = BlockHeader(
        height=height,
        parent_hash=hash_header(parent),
        merkle_root=body_root(chosen),
        state_root=scratch.state_root(),
        timestamp=parent.timestamp + DEFAULT_BLOCK_TIME if timestamp is None else timestamp,
        proposer=proposer,
    )
    return Proposal(Block(header, tuple(chosen)), receipts, dropped)


def sign_vote(key: KeyPair, header: BlockHeader) -> Vote:
    return Vote(key.address, sign(key, hash_header(header)))


@dataclass(frozen=True)
class Finality:
    finalized: bool
    valid_votes: tuple[bytes, ...]
    rejected: tuple[bytes, ...]
    duplicates: int
    quorum: int


def vote_and_finalize(block: Block, validators: ValidatorSet, votes: Iterable[Vote]) -> Finality:
    """Count distinct valid validator votes over the header digest against the quorum."""
    digest = block.digest()
    valid: list[bytes] = []
    rejected: list[bytes] = []
    duplicates = 0
    for vote in votes:
        pub = validators.public_key(vote.validator)
        if pub is None or not verify(pub, digest, vote.signature):
            rejected.append(vote.validator)
            continue
        if vote.validator in valid:
            duplicates += 1
            continue
        valid.append(vote.validator)
    return Finality(len(valid) >= validators.quorum, tuple(valid), tuple(rejected), duplicates,
                    validators.quorum)


def seal(block: Block, votes: Iterable[Vote], validators: ValidatorSet) -> Block:
    """Attach votes to a block; raises InvalidSignature unless they reach quorum."""
    votes = tuple(votes)
    fin = vote_and_finalize(block, validators, votes)
    if not fin.finalized:
        raise InvalidSignature(f"{len(fin.valid_votes)} valid votes < quorum {fin.quorum}")
    kept = []
    for v in votes:
        if v.validator in fin.valid_votes and v.validator not in [k.validator for k in kept]:
            kept.append(v)
    kept.sort(key=lambda v: v.validator)
    return replace(block, votes=tuple(kept))


# Proof of Work -----------------------------------------------------------------------

MAX_TARGET = 2**256 - 1


@dataclass(frozen=True)
class PowParams:
    difficulty_target: int
    max_nonce: int = 2**64 - 1

    def __post_init__(self) -> None:
        if not 0 <= self.difficulty_target <= MAX_TARGET:
            raise ValueError("difficulty target out of range")


def pow_mine(header: BlockHeader, params: PowParams) -> int:
    """Smallest nonce (searching upward from 0) whose header hash is below target."""
    target = params.difficulty_target
    if target == 0:
        raise NonceSpaceExhausted("no hash is below a zero target")
    header = replace(header, difficulty=target)
    for nonce in range(params.max_nonce + 1):
        candidate = replace(header, nonce=nonce)
        if int.from_bytes(hash_header(candidate), "big") < target:
            return nonce
    raise NonceSpaceExhausted(f"no nonce <= {params.max_nonce}")


def pow_seal(block: Block, params: PowParams) -> Block:
    nonce = pow_mine(block.header, params)
    return replace(block, header=replace(block.header, nonce=nonce, difficulty=params.difficulty_target))

