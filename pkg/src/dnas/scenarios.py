"""Declarative threat scenarios and the interpreter that runs them.

A scenario document is a JSON object::

    {"id": "t01-clone", "threat": "T01", "description": "...",
     "config": {"validators": 4, "entities": [["admin", "Administrator"], ...]},
     "steps": [{"op": "produce", "actor": "producer", "pid": "W-0001"}, ...]}

Each step names an ``op`` from :data:`OPS`. A step may carry ``expect``: a
scalar compared with the step's ``result`` field, or an object mapping result
keys to values (or to ``{">=": n}`` / ``{"<=": n}``). Steps whose expected
value is an attack outcome count toward the report's detection flag.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Any, Callable, Sequence

from .codec import canonical_json
from .errors import (ChainUnavailable, DnasError, ScenarioFormatError, TagDisabled, TransactionRejected,
                     UnknownScenario)
from .keyring import KeyPair, sign
from .netsim import SimConfig, Simulation, actor_rng
from .registry import Receipt, Role
from .store import PEDIGREE
from .tag import (TagFactory, TagPayload, TagState, adversary_clone, adversary_disable, adversary_modify,
                  payload_digest, tag_read, tag_write, uid_binding_digest)
from .transaction import Transaction, encode_params, make_transaction
from .validation import Outcome, validate_product

# step op -> required keys
OPS: dict[str, tuple[str, ...]] = {
    "produce": ("actor", "pid"),
    "ship": ("from", "to", "pid"),
    "validate": ("actor", "pid"),
    "scan": ("tag",),
    "sell": ("actor", "pid"),
    "flag": ("actor", "pid"),
    "clone": ("source", "as"),
    "substitute": ("pid", "tag"),
    "modify": ("tag",),
    "resign": ("tag", "actor"),
    "disable": ("tag",),
    "capture": ("actor", "as"),
    "replay": ("tx",),
    "replay_modified": ("tx", "set"),
    "forge": ("attacker", "victim", "method", "params"),
    "attempt": ("actor", "method", "params"),
    "compromise": ("entity",),
    "rotate": ("entity",),
    "dos_flood": ("attacker", "honest"),
    "kill": ("node",),
    "revive": ("node",),
    "rounds": ("n",),
    "query": ("pid",),
    "check_sync": (),
    "linkability": ("actor", "txs"),
}
CONFIG_KEYS = {"validators", "entities", "block_time", "block_gas_limit", "latency", "entity_nodes",
               "forgeable_uid"}
DEFAULT_VINTAGE = 2018
DEFAULT_BOTTLING = "2019-03-01"
CAPTURE_NOTE = ("captured transaction is readable in transit; payload confidentiality is out of scope "
                "and only integrity is enforced")


# -- loading ----------------------------------------------------------------------------------

def catalog() -> dict[str, dict[str, Any]]:
    """Built-in scenarios shipped with the package, keyed by id."""
    out = {}
    for entry in sorted(resources.files("dnas").joinpath("scenarios").iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json"):
            doc = parse_document(entry.read_text(), entry.name)
            out[doc["id"]] = doc
    return out


def parse_document(text: str, origin: str = "<scenario>") -> dict[str, Any]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"{origin}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    check_document(doc, origin)
    return doc


def check_document(doc: Any, origin: str = "<scenario>") -> None:
    if not isinstance(doc, dict):
        raise ScenarioFormatError(f"{origin}: top level must be an object")
    if not isinstance(doc.get("id"), str) or not doc["id"]:
        raise ScenarioFormatError(f"{origin}: missing string field 'id'")
    steps = doc.get("steps")
    if not isinstance(steps, list):
        raise ScenarioFormatError(f"{origin}: 'steps' must be a list")
    cfg = doc.get("config", {})
    if not isinstance(cfg, dict) or set(cfg) - CONFIG_KEYS:
        raise ScenarioFormatError(f"{origin}: config keys must be drawn from {sorted(CONFIG_KEYS)}")
    for i, step in enumerate(steps):
        if not isinstance(step, dict) or step.get("op") not in OPS:
            raise ScenarioFormatError(f"{origin}: step {i}: unknown op {step.get('op') if isinstance(step, dict) else step!r}")
        missing = [k for k in OPS[step["op"]] if k not in step]
        if missing:
            raise ScenarioFormatError(f"{origin}: step {i} ({step['op']}): missing {missing}")


def load_scenario(source: str | Path | dict[str, Any]) -> dict[str, Any]:
    """Resolve a catalog id, a JSON file path, or an in-memory document."""
    if isinstance(source, dict):
        check_document(source)
        return copy.deepcopy(source)
    builtin = catalog()
    if str(source) in builtin:
        return builtin[str(source)]
    path = Path(source)
    if path.suffix == ".json" or path.exists():
        if not path.exists():
            raise UnknownScenario(f"no scenario file {path}")
        return parse_document(path.read_text(), str(path))
    raise UnknownScenario(f"{source!r} is not in the catalog ({', '.join(sorted(builtin))})")


def effective_config(config: SimConfig, doc: dict[str, Any]) -> SimConfig:
    overrides = dict(doc.get("config", {}))
    if "entities" in overrides:
        overrides["entities"] = tuple(tuple(e) for e in overrides["entities"])
    return replace(config, scenario=doc["id"], **overrides)


# -- reports ----------------------------------------------------------------------------------

@dataclass
class ScenarioReport:
    scenario: str
    config: dict[str, Any]
    verdicts: list[dict[str, Any]] = field(default_factory=list)
    detection: bool | None = None
    assertions: list[dict[str, Any]] = field(default_factory=list)
    steps: list[dict[str, Any]] = field(default_factory=list)
    blocks_produced: int = 0
    txs_finalized: int = 0
    txs_dropped: dict[str, int] = field(default_factory=dict)
    availability: list[dict[str, Any]] = field(default_factory=list)
    linkability: list[dict[str, Any]] = field(default_factory=list)
    observations: list[str] = field(default_factory=list)
    chain_fingerprint: str = ""
    trials: list[dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions) and self.detection is not False

    def outcomes(self) -> list[str]:
        return [v["outcome"] for v in self.verdicts]

    def to_json(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario, "config": self.config, "passed": self.passed,
            "detection": self.detection, "verdicts": self.verdicts, "assertions": self.assertions,
            "steps": self.steps, "blocks_produced": self.blocks_produced, "txs_finalized": self.txs_finalized,
            "txs_dropped": self.txs_dropped, "availability": self.availability,
            "linkability": self.linkability, "observations": self.observations,
            "chain_fingerprint": self.chain_fingerprint, "trials": self.trials,
        }

    def to_bytes(self) -> bytes:
        return (canonical_json(self.to_json()) + "\n").encode()

    def summary(self) -> str:
        detection = "n/a" if self.detection is None else ("yes" if self.detection else "MISSED")
        lines = [f"scenario {self.scenario}: {'PASS' if self.passed else 'FAIL'} (detection {detection})",
                 f"  blocks {self.blocks_produced}, txs finalized {self.txs_finalized}, "
                 f"dropped {sum(self.txs_dropped.values())}",
                 f"  {'step':>4}  {'op':<16} {'result':<24} {'expected':<24} ok"]
        for a in self.assertions:
            lines.append(f"  {a['step']:>4}  {a['op']:<16} {str(a['observed']):<24} "
                         f"{str(a['expected']):<24} {'yes' if a['passed'] else 'NO'}")
        for link in self.linkability:
            lines.append(f"  linkability period={link['period']}: {link['metric']} ({link['value']:.6f})")
        return "\n".join(lines) + "\n"


def _compare(expected: Any, observed: Any) -> bool:
    if isinstance(expected, dict) and len(expected) == 1 and next(iter(expected)) in (">=", "<="):
        (op, bound), = expected.items()
        if not isinstance(observed, (int, float)):
            return False
        return observed >= bound if op == ">=" else observed <= bound
    return expected == observed


_ATTACK_OUTCOMES = {o.value for o in Outcome} - {Outcome.GENUINE.value}


# -- linkability --------------------------------------------------------------------------------

def linkability_metric(senders: Sequence[bytes]) -> Fraction:
    """Fraction of pairs of one entity's transactions that share a sender address."""
    total = same = 0
    for a, b in combinations(senders, 2):
        total += 1
        same += a == b
    return Fraction(same, total) if total else Fraction(0)


# -- interpreter ---------------------------------------------------------------------------------

class ScenarioRunner:
    def __init__(self, doc: dict[str, Any], config: SimConfig) -> None:
        self.doc = doc
        self.config = effective_config(config, doc)
        self.sim = Simulation(self.config)
        self.factory = TagFactory(self.config.forgeable_uid)
        self.tags: dict[str, TagState] = {}
        self.presented: dict[str, str] = {}
        self.captured: dict[str, Transaction] = {}
        self.stolen: dict[str, KeyPair] = {}
        self.report = ScenarioReport(doc["id"], self.config.to_json())
        self._detections: list[bool] = []
        self._serial = 0

    # helpers -----------------------------------------------------------------------------

    def _resolve(self, value: Any) -> Any:
        if isinstance(value, str) and value.startswith("@"):
            return self.sim.address_of(value[1:]).hex()
        if isinstance(value, dict):
            return {k: self._resolve(v) for k, v in value.items()}
        return value

    @staticmethod
    def _status(res: Receipt | str) -> str:
        return res.status if isinstance(res, Receipt) else res

    def _snapshot(self, label: str) -> None:
        sim = self.sim
        self.report.availability.append({
            "time": sim.now, "event": label, "alive": [n.name for n in sim.alive_nodes()],
            "height": max((n.chain.height for n in sim.alive_nodes()), default=-1)})

    def _tag(self, handle: str) -> TagState:
        if handle not in self.tags:
            raise ScenarioFormatError(f"unknown tag handle {handle!r}")
        return self.tags[handle]

    # ops ----------------------------------------------------------------------------------

    def op_produce(self, s: dict[str, Any]) -> dict[str, Any]:
        key = self.sim.keyring.active(s["actor"])
        tag = self.factory.new_tag()
        pid = s["pid"]
        payload = TagPayload(pid, key.address, int(s.get("vintage", DEFAULT_VINTAGE)),
                             str(s.get("bottling_date", DEFAULT_BOTTLING)), tag.write_count + 1)
        res = self.sim.transact(s["actor"], "register_product", {
            "pid": pid, "tag_uid_digest": uid_binding_digest(tag.uid, pid).hex(),
            "payload_digest": payload_digest(payload.encode()).hex()})
        if self._status(res) == "ok":
            tag_write(tag, payload.encode(), key)
            self.tags[pid] = tag
            self.presented[pid] = pid
            store = self.sim.entity(s["actor"]).store
            store.upsert_record(pid, PEDIGREE, payload.pedigree())
            store.sync_shadows(pid, tag.read_count, tag.write_count)
        return {"result": self._status(res)}

    def op_ship(self, s: dict[str, Any]) -> dict[str, Any]:
        pid, sender = s["pid"], s["from"]
        tag = self._tag(self.presented.get(pid, pid))
        key = self.sim.keyring.active(sender)
        current = TagPayload.decode(tag.payload)
        payload = replace(current, write_count=tag.write_count + 1).encode()
        res = self.sim.transact(sender, "transfer_custody", {
            "pid": pid, "to": self.sim.address_of(s["to"]).hex(),
            "new_payload_digest": payload_digest(payload).hex()})
        if self._status(res) == "ok":
            tag_write(tag, payload, key)
            store = self.sim.entity(sender).store
            if pid in store.records:
                store.sync_shadows(pid, tag.read_count, tag.write_count)
        return {"result": self._status(res)}

    def op_validate(self, s: dict[str, Any]) -> dict[str, Any]:
        pid = s["pid"]
        handle = s.get("tag", self.presented.get(pid, pid))
        ent = self.sim.entity(s["actor"])
        node = ent.node if ent.node.alive else next(iter(self.sim.alive_nodes()), None)
        if node is None:
            raise ChainUnavailable("no live node to validate against")
        try:
            read = tag_read(self._tag(handle))
        except TagDisabled:
            read = None
        verdict = validate_product(read, pid, node.state, ent.store, node=s["actor"], time=self.sim.now,
                                   step=s.get("step", "receive"))
        self.report.verdicts.append({"step": self._index, "actor": s["actor"], "pid": pid, "tag": handle,
                                     "outcome": verdict.outcome.value, "evidence": list(verdict.evidence),
                                     "expected": s.get("expect")})
        out = {"result": verdict.outcome.value, "evidence": list(verdict.evidence)}
        if s.get("flag_on_failure") and not verdict.genuine:
            out["flag"] = self._status(self.sim.transact(s["actor"], "flag_product",
                                                         {"pid": pid, "reason": verdict.outcome.value}))
        return out

    def op_scan(self, s: dict[str, Any]) -> dict[str, Any]:
        """A plain tag read (consumer app); bumps the hardware read counter only."""
        try:
            read = tag_read(self._tag(s["tag"]))
        except TagDisabled:
            return {"result": "TagUnreadable"}
        return {"result": "read", "read_count": read.read_count}

    def op_sell(self, s: dict[str, Any]) -> dict[str, Any]:
        return {"result": self._status(self.sim.transact(s["actor"], "record_sale_and_deactivate",
                                                         {"pid": s["pid"]}))}

    def op_flag(self, s: dict[str, Any]) -> dict[str, Any]:
        return {"result": self._status(self.sim.transact(s["actor"], "flag_product",
                                                         {"pid": s["pid"], "reason": s.get("reason", "")}))}

    def op_clone(self, s: dict[str, Any]) -> dict[str, Any]:
        clone = adversary_clone(self._tag(s["source"]), self.factory)
        self.tags[s["as"]] = clone
        return {"result": "cloned", "uid": clone.uid.hex()}

    def op_substitute(self, s: dict[str, Any]) -> dict[str, Any]:
        self._tag(s["tag"])
        self.presented[s["pid"]] = s["tag"]
        return {"result": "substituted"}

    def op_modify(self, s: dict[str, Any]) -> dict[str, Any]:
        tag = self._tag(s["tag"])
        if "index" in s:
            index = int(s["index"])
        else:
            # lowest byte of the vintage field
            p = TagPayload.decode(tag.payload)
            index = 4 + len(p.pid.encode()) + 4 + len(p.producer) + 4 + 7
        byte = int(s.get("byte", tag.payload[index] ^ 0x01))
        adversary_modify(tag, index, byte)
        return {"result": "modified", "index": index}

    def op_resign(self, s: dict[str, Any]) -> dict[str, Any]:
        tag = self._tag(s["tag"])
        tag_write(tag, tag.payload, self.sim.keyring.active(s["actor"]))
        return {"result": "resigned"}

    def op_disable(self, s: dict[str, Any]) -> dict[str, Any]:
        adversary_disable(self._tag(s["tag"]))
        return {"result": "disabled"}

    def op_capture(self, s: dict[str, Any]) -> dict[str, Any]:
        ent = self.sim.entity(s["actor"])
        if not ent.submitted:
            raise ScenarioFormatError(f"{s['actor']} has not submitted anything to capture")
        before = self.sim.best_node().state_digest()
        self.captured[s["as"]] = self.sim.txs[ent.submitted[-1]]
        if CAPTURE_NOTE not in self.report.observations:
            self.report.observations.append(CAPTURE_NOTE)
        return {"result": "captured", "state_changed": self.sim.best_node().state_digest() != before}

    def _inject(self, tx: Transaction, pid: str | None) -> dict[str, Any]:
        node = self.sim.best_node()
        try:
            self.sim.submit(tx, node)
        except TransactionRejected as exc:
            result = exc.code
        else:
            self.sim.wait_for([tx.digest()])
            res = self.sim.finalized.get(tx.digest())
            result = "accepted" if res is None else res.status
        out: dict[str, Any] = {"result": result}
        if pid is not None:
            events = self.sim.best_node().events
            out["custody_events"] = sum(1 for e in events if e.pid == pid and e.name == "CustodyTransferred")
        return out

    def op_replay(self, s: dict[str, Any]) -> dict[str, Any]:
        return self._inject(self.captured[s["tx"]], s.get("pid"))

    def op_replay_modified(self, s: dict[str, Any]) -> dict[str, Any]:
        tx = self.captured[s["tx"]]
        params = tx.decoded_params()
        params.update(self._resolve(s["set"]))
        return self._inject(replace(tx, params=encode_params(params)), s.get("pid"))

    def op_forge(self, s: dict[str, Any]) -> dict[str, Any]:
        victim = self.sim.keyring.latest(s["victim"])
        attacker = self.sim.keyring.active(s["attacker"])
        params = self._resolve(s["params"])
        unsigned = Transaction(victim.address, victim.public_key, self.sim.next_nonce(s["victim"]), s["method"],
                               encode_params(params), int(s.get("gas_limit", self.sim.gas.cost(s["method"]) or 1)),
                               int(s.get("gas_price", 1)))
        forged = replace(unsigned, signature=sign(attacker, unsigned.signing_digest()))
        return self._inject(forged, None)

    def op_attempt(self, s: dict[str, Any]) -> dict[str, Any]:
        kw: dict[str, Any] = {k: int(s[k]) for k in ("gas_limit", "gas_price") if k in s}
        params = self._resolve(s["params"])
        if s.get("key") == "stolen":
            key = self.stolen[s["actor"]]
            limit = kw.get("gas_limit", self.sim.gas.cost(s["method"]) or 1)
            tx = make_transaction(key, self.sim.next_nonce(s["actor"]), s["method"], params,
                                  gas_limit=limit, gas_price=kw.get("gas_price", 1))
            return self._inject(tx, None)
        return {"result": self._status(self.sim.transact(s["actor"], s["method"], params, **kw))}

    def op_compromise(self, s: dict[str, Any]) -> dict[str, Any]:
        key = self.sim.keyring.mark_compromised(s["entity"], self.sim.chain.height)
        # the attacker's copy of the leaked key material
        self.stolen[s["entity"]] = KeyPair.from_private(s["entity"], key.private_key, key.created_at)
        return {"result": "compromised"}

    def op_rotate(self, s: dict[str, Any]) -> dict[str, Any]:
        return {"result": self._rotate(s["entity"], s.get("admin", "admin"))}

    def _rotate(self, entity: str, admin: str) -> str:
        sim = self.sim
        height = sim.chain.height
        old = sim.keyring.latest(entity)
        new = sim.keyring.rotate(entity, sim.keyring.authorize_rotation(admin, entity, height), height)
        return self._status(sim.transact(admin, "rotate_entity", {"old": old.address.hex(),
                                                                  "public_key": new.public_key.hex()}))

    def op_dos_flood(self, s: dict[str, Any]) -> dict[str, Any]:
        sim = self.sim
        gas = int(s.get("gas", sim.gas.cost("register_product")))
        n_spam, n_honest = int(s.get("spam", 1000)), int(s.get("honest_count", 10))
        spam_price, honest_price = int(s.get("spam_price", 1)), int(s.get("honest_price", 10))
        attacker, honest = s["attacker"], s["honest"]
        oversized = 0
        for i in range(int(s.get("oversized", 0))):
            try:
                sim.submit_as(attacker, "register_product", {"pid": f"big-{i}", "tag_uid_digest": "00" * 32,
                                                             "payload_digest": "00" * 32},
                              gas_limit=sim.config.block_gas_limit + 1)
            except TransactionRejected as exc:
                oversized += exc.code == "GasLimitTooHigh"
        spam = [sim.submit_as(attacker, "register_product",
                              {"pid": f"spam-{i}", "tag_uid_digest": "00" * 32, "payload_digest": "00" * 32},
                              gas_limit=gas, gas_price=spam_price).digest() for i in range(n_spam)]
        good = [sim.submit_as(honest, "register_product",
                              {"pid": f"honest-{i}", "tag_uid_digest": "11" * 32, "payload_digest": "11" * 32},
                              gas_limit=gas, gas_price=honest_price).digest() for i in range(n_honest)]
        start = sim.chain.height
        sim.wait_for(good, max_rounds=int(s.get("max_rounds", 4 * n_honest + 8)))
        capacity = sim.config.block_gas_limit // gas
        done = [sim.finalized[d] for d in good if d in sim.finalized]
        blocks = max((r.height for r in done), default=start) - start
        node = sim.best_node()
        return {
            "result": "measured",
            "capacity": capacity,
            "bound": math.ceil(n_honest / capacity) if capacity else None,
            "honest_finalized": len(done),
            "blocks_to_finalize": blocks,
            "within_bound": len(done) == n_honest and capacity > 0 and blocks <= math.ceil(n_honest / capacity),
            "spam_pooled": sum(1 for d in spam if d in node.pool),
            "max_block_gas": max((b.gas_reserved() for b in node.chain.blocks[start + 1:]), default=0),
            "block_gas_limit": sim.config.block_gas_limit,
            "oversized_rejected": oversized,
            "honest_order": [sim.finalized[d].ordinal + 1000 * sim.finalized[d].height for d in good
                             if d in sim.finalized],
        }

    def op_kill(self, s: dict[str, Any]) -> dict[str, Any]:
        self.sim.kill(s["node"])
        self._snapshot(f"kill {s['node']}")
        return {"result": "killed"}

    def op_revive(self, s: dict[str, Any]) -> dict[str, Any]:
        self.sim.revive(s["node"])
        self._snapshot(f"revive {s['node']}")
        return {"result": "revived"}

    def op_rounds(self, s: dict[str, Any]) -> dict[str, Any]:
        blocks = self.sim.run_rounds(int(s["n"]))
        self._snapshot(f"rounds {s['n']}")
        return {"result": blocks, "finalized_blocks": blocks}

    def op_query(self, s: dict[str, Any]) -> dict[str, Any]:
        sim = self.sim
        via = s.get("via")
        candidates = [sim.nodes[via]] if via else sim.alive_nodes()
        served = next((n for n in candidates if n.alive), None)
        if served is None:
            return {"result": "ChainUnavailable"}
        try:
            prod = served.state.query_product(s["pid"])
        except DnasError as exc:
            return {"result": exc.code, "served_by": served.name}
        self._snapshot(f"query {s['pid']} via {served.name}")
        return {"result": "served", "served_by": served.name, "status": prod.status.value,
                "custodian": sim.keyring.entity_of(prod.custodian) or prod.custodian.hex()}

    def op_check_sync(self, s: dict[str, Any]) -> dict[str, Any]:
        digests = self.sim.state_digests()
        heights = {n.chain.height for n in self.sim.alive_nodes()}
        converged = len(set(digests.values())) == 1 and len(heights) == 1
        return {"result": converged, "converged": converged, "height": max(heights, default=-1)}

    def op_linkability(self, s: dict[str, Any]) -> dict[str, Any]:
        sim = self.sim
        actor, total = s["actor"], int(s["txs"])
        period = s.get("period")
        period = int(period) if period else None
        mine: list[bytes] = []
        done = 0
        while done < total:
            if period and done:
                self._rotate(actor, s.get("admin", "admin"))
            batch = min(period or total, total - done)
            digests = []
            for _ in range(batch):
                self._serial += 1
                digests.append(sim.submit_as(actor, "register_product", {
                    "pid": f"{actor}-L{self._serial:05d}", "tag_uid_digest": "22" * 32,
                    "payload_digest": "22" * 32}).digest())
            sim.wait_for(digests, max_rounds=batch + 8)
            mine.extend(digests)
            done += batch
        listeners = [n for n in sim.nodes.values() if not n.is_validator]
        listener = sim.nodes[s["listener"]] if "listener" in s else (listeners[0] if listeners else sim.best_node())
        wanted = set(mine)
        senders = [tx.sender for b in listener.chain.blocks for tx in b.body if tx.digest() in wanted]
        metric = linkability_metric(senders)
        entry = {"actor": actor, "period": period, "txs": len(senders), "addresses": len(set(senders)),
                 "metric": str(metric), "value": float(metric)}
        self.report.linkability.append(entry)
        return {"result": str(metric), **entry}

    # driver -------------------------------------------------------------------------------

    def run(self) -> ScenarioReport:
        self._snapshot("start")
        for i, step in enumerate(self.doc["steps"]):
            self._index = i
            handler: Callable[[dict[str, Any]], dict[str, Any]] = getattr(self, f"op_{step['op']}")
            try:
                result = handler(step)
            except ScenarioFormatError:
                raise
            except (KeyError, IndexError) as exc:
                raise ScenarioFormatError(f"step {i} ({step['op']}): bad reference {exc}") from None
            self.report.steps.append({"step": i, "op": step["op"], **result})
            if "expect" in step:
                self._assert(i, step, result)
        sim = self.sim
        self.report.blocks_produced = sim.chain.height
        self.report.txs_finalized = len(sim.finalized)
        dropped: dict[str, int] = {}
        for reason in sim.dropped.values():
            dropped[reason] = dropped.get(reason, 0) + 1
        self.report.txs_dropped = dict(sorted(dropped.items()))
        self.report.chain_fingerprint = sim.fingerprint()
        self._snapshot("end")
        if self._detections:
            self.report.detection = all(self._detections)
        return self.report

    def _assert(self, i: int, step: dict[str, Any], result: dict[str, Any]) -> None:
        expected = step["expect"]
        if isinstance(expected, dict) and not (len(expected) == 1 and next(iter(expected)) in (">=", "<=")):
            checks = [(k, v, result.get(k)) for k, v in sorted(expected.items())]
        else:
            checks = [("result", expected, result.get("result"))]
        for key, want, got in checks:
            ok = _compare(want, got)
            self.report.assertions.append({"step": i, "op": step["op"], "key": key, "expected": want,
                                           "observed": got, "passed": ok})
            attack = step.get("detect", key == "result" and want in _ATTACK_OUTCOMES)
            if attack:
                self._detections.append(ok)


def run_trials(config: SimConfig, document: str | Path | dict[str, Any] | None = None
               ) -> tuple[ScenarioReport, ScenarioRunner]:
    """Run ``config.trials`` seeds; returns the merged report and the first trial's runner."""
    doc = load_scenario(document if document is not None else config.scenario)
    runners = [ScenarioRunner(doc, replace(config, seed=config.seed + t)) for t in range(max(1, config.trials))]
    reports = [r.run() for r in runners]
    head = reports[0]
    if len(reports) > 1:
        head.trials = [{"seed": config.seed + t, "passed": r.passed, "detection": r.detection,
                        "chain_fingerprint": r.chain_fingerprint} for t, r in enumerate(reports)]
        flags = [r.detection for r in reports if r.detection is not None]
        head.detection = all(flags) if flags else None
        head.assertions = [a for r in reports for a in r.assertions]
    return head, runners[0]


def run_scenario(config: SimConfig, document: str | Path | dict[str, Any] | None = None) -> ScenarioReport:
    """Run ``document`` (default: ``config.scenario``) for ``config.trials`` seeds."""
    return run_trials(config, document)[0]


def scenario_replay_mitm(config: SimConfig) -> ScenarioReport:
    return run_scenario(config, "t08-replay")


def scenario_dos_flood(config: SimConfig) -> ScenarioReport:
    return run_scenario(config, "t11-dos")


def scenario_spoof_identity(config: SimConfig) -> ScenarioReport:
    return run_scenario(config, "t14-spoof")


def scenario_availability(config: SimConfig) -> ScenarioReport:
    return run_scenario(config, "availability")


def measure_linkability(config: SimConfig, period: int | None, txs: int = 100) -> Fraction:
    """Linkability seen by a passive listener when ``producer`` rotates every ``period`` txs."""
    doc = {"id": f"linkability-k{period or 'inf'}", "config": {"validators": min(config.validators, 4)},
           "steps": [{"op": "linkability", "actor": "producer", "txs": txs, "period": period}]}
    report = ScenarioRunner(doc, config).run()
    return Fraction(report.linkability[0]["metric"])


# -- honest fuzzing -------------------------------------------------------------------------------

def honest_document(seed: int, max_hops: int = 10) -> dict[str, Any]:
    """Random honest supply-chain run: every validation must come back Genuine."""
    rng = actor_rng(seed, "fuzz")
    n_dist = rng.randint(0, 8)
    distributors = [f"distributor-{i}" for i in range(n_dist)]
    entities = [["admin", Role.ADMINISTRATOR.value], ["producer", Role.PRODUCER.value]]
    entities += [[d, Role.DISTRIBUTOR.value] for d in distributors]
    entities += [["retailer", Role.RETAILER.value], ["consumer", Role.CONSUMER.value]]
    steps: list[dict[str, Any]] = []
    for p in range(rng.randint(1, 3)):
        pid = f"F{seed}-{p}"
        steps.append({"op": "produce", "actor": "producer", "pid": pid, "vintage": rng.randint(1990, 2024)})
        if rng.random() < 0.3:
            steps.append({"op": "validate", "actor": "producer", "pid": pid, "step": "self-check",
                          "expect": "Genuine"})
        path = ["producer"]
        for _ in range(rng.randint(0, min(n_dist, max_hops - 1))):
            choices = [d for d in distributors if d != path[-1]]
            if not choices:
                break
            path.append(rng.choice(choices))
        path.append("retailer")
        for sender, receiver in zip(path, path[1:]):
            steps.append({"op": "ship", "from": sender, "to": receiver, "pid": pid, "expect": "ok"})
            for _ in range(rng.randint(0, 2)):
                steps.append({"op": "scan", "tag": pid})
            steps.append({"op": "validate", "actor": receiver, "pid": pid, "expect": "Genuine"})
            if rng.random() < 0.2:
                steps.append({"op": "validate", "actor": receiver, "pid": pid, "step": "recheck",
                              "expect": "Genuine"})
        if rng.random() < 0.5:
            steps.append({"op": "validate", "actor": "consumer", "pid": pid, "step": "shelf", "expect": "Genuine"})
            steps.append({"op": "sell", "actor": "retailer", "pid": pid, "expect": "ok"})
    return {"id": f"honest-{seed}", "config": {"validators": 1, "entity_nodes": False, "entities": entities},
            "steps": steps}


def honest_run(seed: int) -> ScenarioReport:
    return ScenarioRunner(honest_document(seed), SimConfig(seed=seed)).run()
