"""Deterministic discrete-event simulation of a permissioned PoA network.

Actors (validator nodes, listener nodes, supply-chain entities) never share
mutable state; they talk through messages delivered by one event loop ordered
by ``(time, actor id, sequence)``. Links are reliable and in-order with a fixed
latency in simulated seconds. Round ``r`` starts at ``(r + 1) * block_time``;
its proposer is ``validators[r % n]``.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from .codec import sha256
from .consensus import TxPool, ValidatorSet, propose_block, seal, sign_vote, vote_and_finalize
from .errors import ChainUnavailable, InvariantViolation, LedgerError, TransactionRejected, UnknownEntity
from .keyring import Keyring, KeyPair
from .ledger import Block, Chain, Vote, append_block, check_block_shape, make_genesis
from .registry import DEFAULT_GAS, Event, GasSchedule, Receipt, RegistryState, Role, execute_block_body
from .store import ProvenanceStore
from .transaction import Transaction, make_transaction

DEFAULT_ROSTER: tuple[tuple[str, str], ...] = (
    ("admin", "Administrator"),
    ("producer", "Producer"),
    ("distributor", "Distributor"),
    ("retailer", "Retailer"),
    ("consumer", "Consumer"),
)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    validators: int = 4
    entities: tuple[tuple[str, str], ...] = DEFAULT_ROSTER
    block_time: int = 12
    block_gas_limit: int = DEFAULT_GAS.block_gas_limit
    scenario: str = "happy-path"
    trials: int = 1
    latency: int = 1
    entity_nodes: bool = True
    forgeable_uid: bool = False

    def __post_init__(self) -> None:
        if self.validators < 1:
            raise ValueError("need at least one validator")
        if self.latency < 1 or self.block_time <= 4 * self.latency:
            raise ValueError("block_time must exceed four message latencies")

    def to_json(self) -> dict[str, Any]:
        return {"seed": self.seed, "validators": self.validators, "entities": [list(e) for e in self.entities],
                "block_time": self.block_time, "block_gas_limit": self.block_gas_limit,
                "scenario": self.scenario, "trials": self.trials, "latency": self.latency,
                "entity_nodes": self.entity_nodes, "forgeable_uid": self.forgeable_uid}


def actor_rng(seed: int, actor: str) -> random.Random:
    """Independent stream per actor id, stable under unrelated scenario edits."""
    digest = hashlib.sha256(f"{seed}/{actor}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass
class Node:
    name: str
    actor_id: int
    chain: Chain
    state: RegistryState
    pool: TxPool
    key: KeyPair | None = None  # validators only
    alive: bool = True
    receipts: list[Receipt] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    entities: list[Entity] = field(default_factory=list)
    pending: dict[bytes, tuple[Block, list[Vote], bool]] = field(default_factory=dict)

    @property
    def is_validator(self) -> bool:
        return self.key is not None

    def state_digest(self) -> bytes:
        return self.state.state_root()


@dataclass
class Entity:
    name: str
    role: Role
    node: Node
    store: ProvenanceStore
    submitted: list[bytes] = field(default_factory=list)


class Simulation:
    def __init__(self, config: SimConfig | None = None) -> None:
        self.config = cfg = config or SimConfig()
        self.now = 0
        self._queue: list[tuple[int, int, int, Callable[[], None]]] = []
        self._seq = 0
        self.keyring = Keyring(cfg.seed)
        self.round = 0
        self.next_tick = cfg.block_time
        self.canonical: dict[int, bytes] = {}
        self.finalized: dict[bytes, Receipt] = {}
        self.dropped: dict[bytes, str] = {}
        self.trace: list[dict[str, Any]] = []
        self.txs: dict[bytes, Transaction] = {}

        validator_keys = [self.keyring.generate(f"validator-{i}") for i in range(cfg.validators)]
        self.validator_set = ValidatorSet.from_keys(validator_keys)
        entity_keys = {}
        for name, role in cfg.entities:
            entity_keys[name] = self.keyring.generate(name, admin=(role == Role.ADMINISTRATOR.value))
        self.alloc = {
            "block_gas_limit": cfg.block_gas_limit,
            "timestamp": 0,
            "accounts": [{"address": entity_keys[n].address.hex(), "public_key": entity_keys[n].public_key.hex(),
                          "role": r} for n, r in cfg.entities if r != Role.NONE.value],
            "validators": self.validator_set.to_json(),
        }
        self.gas = GasSchedule(block_gas_limit=cfg.block_gas_limit)
        genesis_state = RegistryState.from_alloc(self.alloc, self.gas)
        self.genesis = make_genesis(genesis_state.state_root())

        self.nodes: dict[str, Node] = {}
        for key in validator_keys:
            self._add_node(key.entity, key)
        self.entities: dict[str, Entity] = {}
        validators = list(self.nodes.values())
        for i, (name, role) in enumerate(cfg.entities):
            home = self._add_node(f"node-{name}") if cfg.entity_nodes else validators[i % len(validators)]
            ent = Entity(name, Role(role), home, ProvenanceStore(name))
            home.entities.append(ent)
            self.entities[name] = ent
        self._schedule_at(self.next_tick, 0, self._tick)

    # -- plumbing --------------------------------------------------------------------------

    def _add_node(self, name: str, key: KeyPair | None = None) -> Node:
        state = RegistryState.from_alloc(self.alloc, self.gas)
        chain = Chain([self.genesis], self.config.block_gas_limit, self.alloc)
        node = Node(name, len(self.nodes) + 1, chain, state, TxPool(self.config.block_gas_limit), key)
        self.nodes[name] = node
        return node

    def _schedule_at(self, time: int, actor_id: int, fn: Callable[[], None]) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (time, actor_id, self._seq, fn))

    def _send(self, dst: Node, fn: Callable[[Node], None]) -> None:
        def deliver() -> None:
            if dst.alive:
                fn(dst)
        self._schedule_at(self.now + self.config.latency, dst.actor_id, deliver)

    def run_until(self, time: int) -> None:
        while self._queue and self._queue[0][0] <= time:
            t, _, _, fn = heapq.heappop(self._queue)
            self.now = t
            fn()
        self.now = max(self.now, time)

    def run_rounds(self, n: int = 1) -> int:
        """Run ``n`` complete rounds; returns the number of blocks finalized.

        Stops one latency short of the next tick so that anything submitted
        afterwards still reaches every pool before that round's proposal.
        """
        before = len(self.canonical)
        end = self.next_tick + n * self.config.block_time - 1 - self.config.latency
        self.run_until(end)
        return len(self.canonical) - before

    def wait_for(self, digests: list[bytes], max_rounds: int | None = None) -> int:
        """Advance round by round until every digest is finalized or dropped."""
        limit = max_rounds if max_rounds is not None else 4 * len(self.validator_set) + 4
        for used in range(1, limit + 1):
            self.run_rounds(1)
            if all(d in self.finalized or d in self.dropped for d in digests):
                return used
        return limit

    # -- consensus ---------------------------------------------------------------------------

    def _tick(self) -> None:
        r = self.round
        self.round += 1
        self.next_tick = self.now + self.config.block_time
        self._schedule_at(self.next_tick, 0, self._tick)
        proposer = self.nodes[f"validator-{r % len(self.validator_set)}"]
        if not proposer.alive:
            self.trace.append({"round": r, "time": self.now, "event": "proposer-down", "node": proposer.name})
            return
        proposer.pending.clear()
        proposal = propose_block(list(proposer.pool.txs.values()), proposer.chain.tip_header,
                                 proposer.key.address, r, self.validator_set, proposer.state,
                                 timestamp=self.now, block_gas_limit=self.config.block_gas_limit)
        for digest, reason in proposal.dropped:
            proposer.pool.txs.pop(digest, None)
            self.dropped.setdefault(digest, reason)
        block = proposal.block
        own = sign_vote(proposer.key, block.header)
        proposer.pending[block.digest()] = (block, [own], False)
        for node in self.nodes.values():
            if node.is_validator and node is not proposer:
                self._send(node, lambda n, b=block, rr=r: self._on_proposal(n, b, rr, proposer))
        self._maybe_finalize(proposer, block.digest())

    def _block_valid(self, node: Node, block: Block, round_: int | None = None) -> bool:
        if block.header.parent_hash != node.chain.tip or block.height != node.chain.height + 1:
            return False
        if round_ is not None and block.header.proposer != self.validator_set.proposer_for(round_):
            return False
        try:
            check_block_shape(block, self.config.block_gas_limit)
            scratch = node.state.copy()
            execute_block_body(scratch, block.body, block.height)
        except (LedgerError, TransactionRejected):
            return False
        return scratch.state_root() == block.header.state_root

    def _on_proposal(self, node: Node, block: Block, round_: int, proposer: Node) -> None:
        if not self._block_valid(node, block, round_):
            self.trace.append({"round": round_, "time": self.now, "event": "proposal-rejected", "node": node.name})
            return
        vote = sign_vote(node.key, block.header)
        self._send(proposer, lambda p, d=block.digest(), v=vote: self._on_vote(p, d, v))

    def _on_vote(self, proposer: Node, digest: bytes, vote: Vote) -> None:
        if digest not in proposer.pending:
            return
        block, votes, done = proposer.pending[digest]
        votes.append(vote)
        self._maybe_finalize(proposer, digest)

    def _maybe_finalize(self, proposer: Node, digest: bytes) -> None:
        block, votes, done = proposer.pending[digest]
        if done or not vote_and_finalize(block, self.validator_set, votes).finalized:
            return
        proposer.pending[digest] = (block, votes, True)
        sealed = seal(block, votes, self.validator_set)
        self._apply(proposer, sealed)
        for node in self.nodes.values():
            if node is not proposer:
                self._send(node, lambda n, b=sealed, src=proposer: self._on_finalized(n, b, src))

    def _on_finalized(self, node: Node, block: Block, source: Node) -> None:
        if block.height <= node.chain.height:
            return
        if block.height > node.chain.height + 1:
            self._sync(node, source)
            return
        self._apply(node, block)

    def _apply(self, node: Node, block: Block) -> None:
        if not vote_and_finalize(block, self.validator_set, block.votes).finalized:
            raise InvariantViolation(f"{node.name}: block {block.height} lacks quorum")
        append_block(node.chain, block)
        receipts = execute_block_body(node.state, block.body, block.height)
        if node.state.state_root() != block.header.state_root:
            raise InvariantViolation(f"{node.name}: state root diverged at height {block.height}")
        seen = self.canonical.setdefault(block.height, block.digest())
        if seen != block.digest():
            raise InvariantViolation(f"conflicting blocks finalized at height {block.height}")
        node.receipts.extend(receipts)
        for receipt in receipts:
            node.events.extend(receipt.events)
            self.finalized.setdefault(receipt.tx_hash, receipt)
        for digest in node.pool.remove_finalized(block, node.state):
            self.dropped.setdefault(digest, "BadNonce")
        for ent in node.entities:
            for receipt in receipts:
                for ev in receipt.events:
                    ent.store.apply_event(ev)

    def _sync(self, node: Node, source: Node) -> None:
        for block in source.chain.blocks[node.chain.height + 1:]:
            self._apply(node, block)

    # -- node lifecycle --------------------------------------------------------------------------

    def kill(self, name: str) -> None:
        self.nodes[name].alive = False
        self.trace.append({"time": self.now, "event": "kill", "node": name})

    def revive(self, name: str) -> None:
        node = self.nodes[name]
        node.alive = True
        node.pending.clear()
        self.trace.append({"time": self.now, "event": "revive", "node": name})
        peer = max((n for n in self.nodes.values() if n.alive and n is not node),
                   key=lambda n: (n.chain.height, -n.actor_id), default=None)
        if peer is not None and peer.chain.height > node.chain.height:
            self._send(node, lambda n, src=peer: self._sync(n, src))

    def alive_nodes(self) -> list[Node]:
        return [n for n in self.nodes.values() if n.alive]

    # -- clients -----------------------------------------------------------------------------------

    def entity(self, name: str) -> Entity:
        if name not in self.entities:
            raise UnknownEntity(name)
        return self.entities[name]

    def key_of(self, name: str) -> KeyPair:
        return self.keyring.latest(name)

    def address_of(self, name: str) -> bytes:
        return self.keyring.latest(name).address

    def next_nonce(self, name: str) -> int:
        ent = self.entity(name)
        addr = self.address_of(name)
        committed = ent.node.state.nonce_of(addr)
        pending = sum(1 for tx in ent.node.pool.txs.values() if tx.sender == addr and tx.nonce >= committed)
        return committed + pending

    def build_tx(self, name: str, method: str, params: dict[str, Any], *, gas_price: int = 1,
                 gas_limit: int | None = None, nonce: int | None = None) -> Transaction:
        limit = gas_limit if gas_limit is not None else (self.gas.cost(method) or 1)
        return make_transaction(self.keyring.active(name), self.next_nonce(name) if nonce is None else nonce,
                                method, params, gas_limit=limit, gas_price=gas_price)

    def submit(self, tx: Transaction, via: str | Node) -> bytes:
        """Admit ``tx`` at a node and gossip it; raises TransactionRejected."""
        node = self.nodes[via] if isinstance(via, str) else via
        self.txs.setdefault(tx.digest(), tx)
        if not node.alive:
            raise ChainUnavailable(f"{node.name} is down")
        try:
            digest = node.pool.admit(tx, node.state, self.keyring.is_admissible(tx.public_key))
        except TransactionRejected as exc:
            self.dropped.setdefault(tx.digest(), exc.code)
            raise
        for other in self.nodes.values():
            if other is not node:
                self._send(other, lambda n, t=tx: self._gossip(n, t))
        return digest

    def _gossip(self, node: Node, tx: Transaction) -> None:
        try:
            node.pool.admit(tx, node.state, self.keyring.is_admissible(tx.public_key))
        except TransactionRejected:
            pass

    def submit_as(self, name: str, method: str, params: dict[str, Any], **kw: Any) -> Transaction:
        tx = self.build_tx(name, method, params, **kw)
        ent = self.entity(name)
        self.submit(tx, ent.node)
        ent.submitted.append(tx.digest())
        return tx

    def transact(self, name: str, method: str, params: dict[str, Any], **kw: Any) -> Receipt | str:
        """Submit and wait; returns the receipt, or the rejection/drop reason."""
        try:
            tx = self.submit_as(name, method, params, **kw)
        except TransactionRejected as exc:
            return exc.code
        self.wait_for([tx.digest()])
        return self.finalized.get(tx.digest()) or self.dropped.get(tx.digest(), "Pending")

    # -- views -------------------------------------------------------------------------------------

    def best_node(self) -> Node:
        alive = self.alive_nodes() or list(self.nodes.values())
        return max(alive, key=lambda n: (n.chain.height, -n.actor_id))

    @property
    def chain(self) -> Chain:
        return self.best_node().chain

    def query(self, pid: str, via: str | None = None):
        node = self.nodes[via] if via else self.best_node()
        if not node.alive:
            raise ChainUnavailable(f"{node.name} is down")
        return node.state.query_product(pid)

    def state_digests(self, alive_only: bool = True) -> dict[str, str]:
        return {n.name: n.state_digest().hex() for n in self.nodes.values() if n.alive or not alive_only}

    def receipts(self) -> list[Receipt]:
        return sorted(self.best_node().receipts, key=lambda r: (r.height, r.ordinal))

    def events(self) -> list[Event]:
        return sorted(self.best_node().events, key=lambda e: (e.height, e.ordinal))

    def fingerprint(self) -> str:
        return sha256(b"".join(b.digest() for b in self.chain.blocks)).hex()
