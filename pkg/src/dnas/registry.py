"""Account state and the role-restricted product-registry contract.

The contract has a closed method set. Each method checks every precondition
before touching state, so a failing call leaves state untouched; a failed
transaction still consumes gas and is recorded, but the sender nonce only
advances on success (replays of failed transactions are caught by digest at
pool admission).
"""

from __future__ import annotations

import enum
from copy import copy
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Mapping

from .codec import encode_fields, sha256, text, u64
from .errors import (AlreadyRegistered, BadNonce, BadParams, BadSignature, BadStatus, DuplicatePid,
                     InvalidAddress, InvalidRecipient, InvariantViolation, NotCustodian, RegistryError, Unauthorized,
                     UnknownMethod, UnknownPid)
from .keyring import address_of
from .transaction import Transaction

METHODS_VERSION = "v1"
CONTRACT_ADDRESS = sha256(b"dnas/product-registry")[:20]


class Role(str, enum.Enum):
    ADMINISTRATOR = "Administrator"
    PRODUCER = "Producer"
    DISTRIBUTOR = "Distributor"
    RETAILER = "Retailer"
    CONSUMER = "Consumer"
    NONE = "None"


SUPPLY_CHAIN_ROLES = frozenset({Role.PRODUCER, Role.DISTRIBUTOR, Role.RETAILER})


class Status(str, enum.Enum):
    REGISTERED = "Registered"
    IN_TRANSIT = "InTransit"
    SOLD = "Sold"
    DEACTIVATED = "Deactivated"
    FLAGGED = "Flagged"


# Legal status transitions, including the transient Sold step of a sale.
TRANSITIONS: dict[Status, frozenset[Status]] = {
    Status.REGISTERED: frozenset({Status.IN_TRANSIT, Status.SOLD, Status.FLAGGED}),
    Status.IN_TRANSIT: frozenset({Status.IN_TRANSIT, Status.SOLD, Status.FLAGGED}),
    Status.SOLD: frozenset({Status.DEACTIVATED, Status.FLAGGED}),
    Status.DEACTIVATED: frozenset({Status.FLAGGED}),
    Status.FLAGGED: frozenset({Status.FLAGGED}),
}


class Method(str, enum.Enum):
    REGISTER_ENTITY = "register_entity"
    REGISTER_PRODUCT = "register_product"
    TRANSFER_CUSTODY = "transfer_custody"
    RECORD_SALE = "record_sale_and_deactivate"
    FLAG_PRODUCT = "flag_product"
    ROTATE_ENTITY = "rotate_entity"


AUTHORIZED: dict[Method, frozenset[Role]] = {
    Method.REGISTER_ENTITY: frozenset({Role.ADMINISTRATOR}),
    Method.ROTATE_ENTITY: frozenset({Role.ADMINISTRATOR}),
    Method.REGISTER_PRODUCT: frozenset({Role.PRODUCER}),
    Method.TRANSFER_CUSTODY: SUPPLY_CHAIN_ROLES,
    Method.RECORD_SALE: frozenset({Role.RETAILER}),
    Method.FLAG_PRODUCT: SUPPLY_CHAIN_ROLES,
}


@dataclass(frozen=True)
class GasSchedule:
    costs: Mapping[str, int] = field(default_factory=lambda: {
        Method.REGISTER_ENTITY.value: 50,
        Method.ROTATE_ENTITY.value: 50,
        Method.REGISTER_PRODUCT.value: 100,
        Method.TRANSFER_CUSTODY.value: 80,
        Method.RECORD_SALE.value: 60,
        Method.FLAG_PRODUCT.value: 40,
    })
    block_gas_limit: int = 1000

    def __post_init__(self) -> None:
        if any(c <= 0 for c in self.costs.values()):
            raise ValueError("gas costs must be positive")

    def cost(self, method: str) -> int | None:
        return self.costs.get(method)


DEFAULT_GAS = GasSchedule()


class AccountKind(str, enum.Enum):
    EXTERNAL = "externally-owned"
    CONTRACT = "contract"


@dataclass
class Account:
    address: bytes
    kind: AccountKind = AccountKind.EXTERNAL
    nonce: int = 0
    role: Role = Role.NONE
    public_key: bytes = b""

    def encode(self) -> bytes:
        return encode_fields(self.address, text(self.kind.value), u64(self.nonce), text(self.role.value),
                             self.public_key)


@dataclass
class OnChainProduct:
    pid: str
    tag_uid_digest: bytes
    payload_digest: bytes
    write_count: int
    custodian: bytes
    status: Status
    producer: bytes
    writer: bytes  # account whose key signed the current tag payload
    flag_reason: str = ""

    def encode(self) -> bytes:
        return encode_fields(text(self.pid), self.tag_uid_digest, self.payload_digest, u64(self.write_count),
                             self.custodian, text(self.status.value), self.producer, self.writer,
                             text(self.flag_reason))

    def to_json(self) -> dict[str, Any]:
        out = asdict(self)
        for k in ("tag_uid_digest", "payload_digest", "custodian", "producer", "writer"):
            out[k] = out[k].hex()
        out["status"] = self.status.value
        return out


@dataclass(frozen=True)
class Event:
    name: str
    pid: str
    emitter: bytes
    height: int
    ordinal: int
    data: tuple[tuple[str, str], ...] = ()

    def get(self, key: str, default: str = "") -> str:
        return dict(self.data).get(key, default)

    def to_json(self) -> dict[str, Any]:
        return {"name": self.name, "pid": self.pid, "emitter": self.emitter.hex(), "height": self.height,
                "ordinal": self.ordinal, "data": dict(self.data)}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> Event:
        return cls(obj["name"], obj["pid"], bytes.fromhex(obj["emitter"]), obj["height"], obj["ordinal"],
                   tuple(sorted(obj["data"].items())))


@dataclass(frozen=True)
class Receipt:
    tx_hash: bytes
    height: int
    ordinal: int
    method: str
    gas_used: int
    gas_price: int
    status: str  # "ok" or the failing error's class name
    events: tuple[Event, ...] = ()

    @property
    def total_cost(self) -> int:
        return self.gas_used * self.gas_price

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> dict[str, Any]:
        return {"tx_hash": self.tx_hash.hex(), "height": self.height, "ordinal": self.ordinal,
                "method": self.method, "gas_used": self.gas_used, "gas_price": self.gas_price,
                "total_cost": self.total_cost, "status": self.status,
                "events": [e.to_json() for e in self.events]}

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> Receipt:
        return cls(bytes.fromhex(obj["tx_hash"]), obj["height"], obj["ordinal"], obj["method"], obj["gas_used"],
                   obj["gas_price"], obj["status"], tuple(Event.from_json(e) for e in obj["events"]))


# (name, pid, data) emitted by a method before height/ordinal are known
PendingEvent = tuple[str, str, dict[str, str]]


def _table_digest(entries: Iterable[tuple[bytes, bytes]]) -> bytes:
    h = b"".join(encode_fields(k, v) for k, v in sorted(entries))
    return sha256(h)


class RegistryState:
    """Global account state plus the registry contract's storage."""

    def __init__(self, gas: GasSchedule = DEFAULT_GAS) -> None:
        self.gas = gas
        self.accounts: dict[bytes, Account] = {
            CONTRACT_ADDRESS: Account(CONTRACT_ADDRESS, AccountKind.CONTRACT)}
        self.products: dict[str, OnChainProduct] = {}

    # -- genesis / snapshots ------------------------------------------------------

    @classmethod
    def from_alloc(cls, alloc: Mapping[str, Any], gas: GasSchedule | None = None) -> RegistryState:
        state = cls(gas or GasSchedule(block_gas_limit=int(alloc.get("block_gas_limit", DEFAULT_GAS.block_gas_limit))))
        for entry in alloc.get("accounts", []):
            public = bytes.fromhex(entry["public_key"])
            address = address_of(public)
            if entry.get("address") and bytes.fromhex(entry["address"]) != address:
                raise InvalidAddress(f"alloc address mismatch for {entry['address']}")
            state.accounts[address] = Account(address, role=Role(entry["role"]), public_key=public)
        return state

    def copy(self) -> RegistryState:
        other = RegistryState.__new__(RegistryState)
        other.gas = self.gas
        other.accounts = {k: copy(v) for k, v in self.accounts.items()}
        other.products = {k: copy(v) for k, v in self.products.items()}
        return other

    def state_root(self) -> bytes:
        accounts = _table_digest((a, acct.encode()) for a, acct in self.accounts.items())
        products = _table_digest((text(p), prod.encode()) for p, prod in self.products.items())
        return sha256(encode_fields(b"accounts", accounts, b"products", products))

    # -- queries --------------------------------------------------------------------

    def role_of(self, address: bytes) -> Role:
        acct = self.accounts.get(address)
        return acct.role if acct else Role.NONE

    def nonce_of(self, address: bytes) -> int:
        acct = self.accounts.get(address)
        return acct.nonce if acct else 0

    def public_key_of(self, address: bytes) -> bytes | None:
        acct = self.accounts.get(address)
        return acct.public_key if acct and acct.public_key else None

    def query_product(self, pid: str) -> OnChainProduct:
        if pid not in self.products:
            raise UnknownPid(pid)
        return copy(self.products[pid])

    # -- methods (raise RegistryError subclasses; never partially apply) -------------

    def _authorize(self, method: Method, sender: bytes) -> Role:
        role = self.role_of(sender)
        if role not in AUTHORIZED[method]:
            raise Unauthorized(f"{role.value} may not call {method.value}")
        return role

    def _product(self, pid: str) -> OnChainProduct:
        if pid not in self.products:
            raise UnknownPid(pid)
        return self.products[pid]

    def register_entity(self, sender: bytes, public_key: bytes, role: Role) -> list[PendingEvent]:
        self._authorize(Method.REGISTER_ENTITY, sender)
        if role is Role.NONE:
            raise BadParams("cannot grant role None")
        address = address_of(public_key)
        if address in self.accounts:
            raise AlreadyRegistered(address.hex())
        self.accounts[address] = Account(address, role=role, public_key=public_key)
        return [("RoleGranted", "", {"address": address.hex(), "role": role.value})]

    def rotate_entity(self, sender: bytes, old: bytes, public_key: bytes) -> list[PendingEvent]:
        self._authorize(Method.ROTATE_ENTITY, sender)
        acct = self.accounts.get(old)
        if acct is None or acct.role is Role.NONE or acct.kind is AccountKind.CONTRACT:
            raise InvalidAddress(f"no active entity at {old.hex()}")
        new = address_of(public_key)
        if new in self.accounts:
            raise AlreadyRegistered(new.hex())
        role = acct.role
        acct.role = Role.NONE
        self.accounts[new] = Account(new, role=role, public_key=public_key)
        moved = []
        for pid in sorted(self.products):
            prod = self.products[pid]
            if prod.custodian == old:
                prod.custodian = new
                moved.append(pid)
        return [("EntityRotated", "", {"old": old.hex(), "new": new.hex(), "role": role.value,
                                        "custody_moved": ",".join(moved)})]

    def register_product(self, sender: bytes, pid: str, tag_uid_digest: bytes,
                         payload_digest: bytes) -> list[PendingEvent]:
        self._authorize(Method.REGISTER_PRODUCT, sender)
        if not pid:
            raise BadParams("empty pid")
        if pid in self.products:
            raise DuplicatePid(pid)
        self.products[pid] = OnChainProduct(pid, tag_uid_digest, payload_digest, 1, sender,
                                            Status.REGISTERED, sender, sender)
        return [("ProductRegistered", pid, {"producer": sender.hex(), "payload_digest": payload_digest.hex()})]

    def transfer_custody(self, sender: bytes, pid: str, to: bytes,
                         new_payload_digest: bytes) -> list[PendingEvent]:
        self._authorize(Method.TRANSFER_CUSTODY, sender)
        prod = self._product(pid)
        if prod.status not in (Status.REGISTERED, Status.IN_TRANSIT):
            raise BadStatus(f"{pid} is {prod.status.value}")
        if prod.custodian != sender:
            raise NotCustodian(pid)
        if to == sender or self.role_of(to) not in SUPPLY_CHAIN_ROLES:
            raise InvalidRecipient(to.hex())
        prod.custodian = to
        prod.write_count += 1
        prod.payload_digest = new_payload_digest
        prod.writer = sender
        prod.status = Status.IN_TRANSIT
        return [("CustodyTransferred", pid, {"from": sender.hex(), "to": to.hex(),
                                             "write_count": str(prod.write_count),
                                             "payload_digest": new_payload_digest.hex()})]

    def record_sale_and_deactivate(self, sender: bytes, pid: str) -> list[PendingEvent]:
        self._authorize(Method.RECORD_SALE, sender)
        prod = self._product(pid)
        if prod.status not in (Status.REGISTERED, Status.IN_TRANSIT):
            raise BadStatus(f"{pid} is {prod.status.value}")
        if prod.custodian != sender:
            raise NotCustodian(pid)
        prod.status = Status.SOLD
        prod.status = Status.DEACTIVATED
        return [("ProductSold", pid, {"retailer": sender.hex()}),
                ("TagDeactivated", pid, {"retailer": sender.hex()})]

    def flag_product(self, sender: bytes, pid: str, reason: str) -> list[PendingEvent]:
        self._authorize(Method.FLAG_PRODUCT, sender)
        prod = self._product(pid)
        prod.status = Status.FLAGGED
        prod.flag_reason = reason
        return [("ProductFlagged", pid, {"reason": reason, "by": sender.hex()})]

    # -- transactions ------------------------------------------------------------------

    def _dispatch(self, tx: Transaction) -> list[PendingEvent]:
        try:
            method = Method(tx.method)
        except ValueError:
            raise UnknownMethod(tx.method) from None
        try:
            p = tx.decoded_params()
            handler: Callable[[], list[PendingEvent]]
            if method is Method.REGISTER_ENTITY:
                handler = lambda: self.register_entity(tx.sender, bytes.fromhex(p["public_key"]), Role(p["role"]))
            elif method is Method.ROTATE_ENTITY:
                handler = lambda: self.rotate_entity(tx.sender, bytes.fromhex(p["old"]),
                                                     bytes.fromhex(p["public_key"]))
            elif method is Method.REGISTER_PRODUCT:
                handler = lambda: self.register_product(tx.sender, str(p["pid"]), bytes.fromhex(p["tag_uid_digest"]),
                                                        bytes.fromhex(p["payload_digest"]))
            elif method is Method.TRANSFER_CUSTODY:
                handler = lambda: self.transfer_custody(tx.sender, str(p["pid"]), bytes.fromhex(p["to"]),
                                                        bytes.fromhex(p["new_payload_digest"]))
            elif method is Method.RECORD_SALE:
                handler = lambda: self.record_sale_and_deactivate(tx.sender, str(p["pid"]))
            else:
                handler = lambda: self.flag_product(tx.sender, str(p["pid"]), str(p.get("reason", "")))
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            raise BadParams(str(exc)) from None
        try:
            return handler()
        except (ValueError, KeyError, TypeError) as exc:
            if isinstance(exc, RegistryError):
                raise
            raise BadParams(str(exc)) from None

    def check_admissible(self, tx: Transaction) -> None:
        """Signature and nonce checks; failures mean the tx never enters a block."""
        acct = self.accounts.get(tx.sender)
        if acct is not None and acct.kind is AccountKind.CONTRACT:
            raise BadSignature("contract accounts cannot originate transactions")
        if not tx.signature_valid():
            raise BadSignature(tx.digest().hex())
        if tx.nonce != self.nonce_of(tx.sender):
            raise BadNonce(f"nonce {tx.nonce}, expected {self.nonce_of(tx.sender)}")

    def execute_transaction(self, tx: Transaction, height: int = 0, ordinal: int = 0,
                            first_event: int = 0) -> Receipt:
        """Apply ``tx`` atomically and return its receipt.

        Raises BadSignature/BadNonce for inadmissible transactions. Method
        failures (including OutOfGas) are reported in ``Receipt.status`` with
        the state left exactly as before.
        """
        self.check_admissible(tx)
        cost = self.gas.cost(tx.method)
        if cost is None:
            return Receipt(tx.digest(), height, ordinal, tx.method, tx.gas_limit, tx.gas_price, UnknownMethod.__name__)
        if tx.gas_limit < cost:
            return Receipt(tx.digest(), height, ordinal, tx.method, tx.gas_limit, tx.gas_price, "OutOfGas")
        try:
            pending = self._dispatch(tx)
        except RegistryError as exc:
            return Receipt(tx.digest(), height, ordinal, tx.method, cost, tx.gas_price, exc.code)
        acct = self.accounts.get(tx.sender)
        if acct is None:
            acct = self.accounts[tx.sender] = Account(tx.sender, public_key=tx.public_key)
        acct.nonce += 1
        events = tuple(
            Event(name, pid, tx.sender, height, first_event + i, tuple(sorted(data.items())))
            for i, (name, pid, data) in enumerate(pending))
        return Receipt(tx.digest(), height, ordinal, tx.method, cost, tx.gas_price, "ok", events)


def execute_transaction(tx: Transaction, state: RegistryState, height: int = 0, ordinal: int = 0) -> Receipt:
    return state.execute_transaction(tx, height, ordinal)


def execute_block_body(state: RegistryState, body: Iterable[Transaction], height: int) -> list[Receipt]:
    receipts = []
    n_events = 0
    for i, tx in enumerate(body):
        receipt = state.execute_transaction(tx, height, i, n_events)
        n_events += len(receipt.events)
        receipts.append(receipt)
    return receipts


def state_from_chain(chain: Any) -> tuple[RegistryState, list[Receipt]]:
    """Rebuild state by re-executing every block from the chain's genesis alloc.

    Raises InvariantViolation if a recomputed state root disagrees with a header.
    """
    state = RegistryState.from_alloc(chain.genesis_alloc)
    receipts: list[Receipt] = []
    for block in chain.blocks[1:]:
        receipts.extend(execute_block_body(state, block.body, block.height))
        if state.state_root() != block.header.state_root:
            raise InvariantViolation(f"state root mismatch at height {block.height}")
    return state, receipts
