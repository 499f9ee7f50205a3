"""Per-participant off-chain provenance store.

Every mutation is appended to an optional JSON-lines log before it is applied,
so ``ProvenanceStore.load`` replays a store exactly. Custody history is fed
from on-chain events, which lets any node rebuild it from the event log.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .codec import canonical_bytes, canonical_json, sha256
from .errors import MalformedEntry, UnknownCategory, UnknownPid
from .registry import Event

PEDIGREE = "pedigree"
HISTORY = "transaction_history"
SUPPLY_CHAIN = "supply_chain_data"
UNSUCCESSFUL = "unsuccessful_validations"
CATEGORIES = (PEDIGREE, HISTORY, SUPPLY_CHAIN, UNSUCCESSFUL)

_REQUIRED = {
    PEDIGREE: ("pid", "producer", "vintage", "bottling_date"),
    HISTORY: ("from", "to", "height"),
    SUPPLY_CHAIN: ("node", "type"),
    UNSUCCESSFUL: ("outcome", "evidence", "node"),
}


@dataclass
class ProductRecord:
    pid: str
    pedigree: dict[str, Any] = field(default_factory=dict)
    transaction_history: list[dict[str, Any]] = field(default_factory=list)
    supply_chain_data: list[dict[str, Any]] = field(default_factory=list)
    unsuccessful_validations: list[dict[str, Any]] = field(default_factory=list)
    read_count_shadow: int = 0
    write_count_shadow: int = 0

    def to_json(self) -> dict[str, Any]:
        return {
            "pid": self.pid,
            PEDIGREE: self.pedigree,
            HISTORY: self.transaction_history,
            SUPPLY_CHAIN: self.supply_chain_data,
            UNSUCCESSFUL: self.unsuccessful_validations,
            "read_count_shadow": self.read_count_shadow,
            "write_count_shadow": self.write_count_shadow,
        }


def entry_digest(entry: dict[str, Any]) -> str:
    return sha256(canonical_bytes(entry)).hex()


class ProvenanceStore:
    def __init__(self, node: str = "", path: str | os.PathLike | None = None) -> None:
        self.node = node
        self.path = Path(path) if path is not None else None
        self.records: dict[str, ProductRecord] = {}
        self._seen: set[tuple[str, str, str]] = set()
        self._replaying = False

    # -- log ------------------------------------------------------------------------

    def _log(self, op: dict[str, Any]) -> None:
        if self.path is not None and not self._replaying:
            with self.path.open("a") as fh:
                fh.write(canonical_json(op) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike, node: str = "") -> ProvenanceStore:
        store = cls(node)
        store._replaying = True
        text = Path(path).read_text() if Path(path).exists() else ""
        for line in text.splitlines():
            if line.strip():
                store._apply(json.loads(line))
        store._replaying = False
        store.path = Path(path)
        return store

    def _apply(self, op: dict[str, Any]) -> None:
        kind = op["op"]
        if kind == "upsert":
            self.upsert_record(op["pid"], op["category"], op["entry"])
        elif kind == "shadows":
            self.sync_shadows(op["pid"], op["read_count"], op["write_count"])
        else:
            raise MalformedEntry(f"unknown log op {kind!r}")

    # -- operations ---------------------------------------------------------------------

    def _record(self, pid: str) -> ProductRecord:
        rec = self.records.get(pid)
        if rec is None:
            rec = self.records[pid] = ProductRecord(pid)
        return rec

    def upsert_record(self, pid: str, category: str, entry: dict[str, Any]) -> ProductRecord:
        """Replace the pedigree or append to a history category.

        Re-applying an entry with the same canonical digest is a no-op.
        """
        if category not in CATEGORIES:
            raise UnknownCategory(category)
        if not isinstance(entry, dict) or any(k not in entry for k in _REQUIRED[category]):
            raise MalformedEntry(f"{category} entry needs {_REQUIRED[category]}")
        key = (pid, category, entry_digest(entry))
        if key in self._seen:
            return self._record(pid)
        self._log({"op": "upsert", "pid": pid, "category": category, "entry": entry})
        self._seen.add(key)
        rec = self._record(pid)
        entry = copy.deepcopy(entry)
        if category == PEDIGREE:
            rec.pedigree = entry
        else:
            getattr(rec, category).append(entry)
        return rec

    def query_by_pid(self, pid: str) -> ProductRecord:
        if pid not in self.records:
            raise UnknownPid(pid)
        return copy.deepcopy(self.records[pid])

    def record_unsuccessful(self, pid: str, verdict: Any, context: dict[str, Any] | None = None) -> ProductRecord:
        """Append a failed validation. ``verdict`` must not be Genuine."""
        outcome = getattr(verdict, "outcome", verdict)
        outcome = getattr(outcome, "value", outcome)
        if outcome == "Genuine":
            raise MalformedEntry("record_unsuccessful requires a failure verdict")
        context = dict(context or {})
        entry = {"outcome": outcome, "evidence": list(getattr(verdict, "evidence", ())),
                 "node": context.pop("node", self.node), "time": context.pop("time", 0)}
        entry.update(context)
        return self.upsert_record(pid, UNSUCCESSFUL, entry)

    def sync_shadows(self, pid: str, read_count: int, write_count: int) -> ProductRecord:
        if pid not in self.records:
            raise UnknownPid(pid)
        rec = self.records[pid]
        new = (max(rec.read_count_shadow, read_count), max(rec.write_count_shadow, write_count))
        if new != (rec.read_count_shadow, rec.write_count_shadow):
            self._log({"op": "shadows", "pid": pid, "read_count": new[0], "write_count": new[1]})
            rec.read_count_shadow, rec.write_count_shadow = new
        return rec

    def shadows(self, pid: str) -> tuple[int, int]:
        rec = self.records.get(pid)
        return (rec.read_count_shadow, rec.write_count_shadow) if rec else (0, 0)

    # -- event sourcing --------------------------------------------------------------------

    def apply_event(self, event: Event) -> None:
        if event.name == "ProductRegistered":
            self._record(event.pid)
        elif event.name == "CustodyTransferred":
            self.upsert_record(event.pid, HISTORY, {
                "from": event.get("from"), "to": event.get("to"), "height": event.height,
                "ordinal": event.ordinal, "write_count": int(event.get("write_count", "0")),
            })
        elif event.name in ("ProductSold", "TagDeactivated", "ProductFlagged"):
            entry = {"node": "chain", "type": event.name, "height": event.height, "ordinal": event.ordinal}
            if event.name == "ProductFlagged":
                entry["reason"] = event.get("reason")
            self.upsert_record(event.pid, SUPPLY_CHAIN, entry)

    @classmethod
    def from_document(cls, doc: dict[str, Any], node: str = "") -> ProvenanceStore:
        """Inverse of :meth:`dump` with no pid."""
        store = cls(node)
        store._replaying = True
        try:
            for pid in sorted(doc):
                rec = doc[pid]
                if rec.get(PEDIGREE):
                    store.upsert_record(pid, PEDIGREE, rec[PEDIGREE])
                for category in (HISTORY, SUPPLY_CHAIN, UNSUCCESSFUL):
                    for entry in rec.get(category, []):
                        store.upsert_record(pid, category, entry)
                store._record(pid)
                store.sync_shadows(pid, int(rec.get("read_count_shadow", 0)), int(rec.get("write_count_shadow", 0)))
        except (AttributeError, TypeError, ValueError) as exc:
            raise MalformedEntry(f"bad store document: {exc}") from None
        finally:
            store._replaying = False
        return store

    @classmethod
    def from_events(cls, events: Iterable[Event], node: str = "") -> ProvenanceStore:
        store = cls(node)
        for ev in events:
            store.apply_event(ev)
        return store

    def dump(self, pid: str | None = None) -> dict[str, Any]:
        if pid is not None:
            return self.query_by_pid(pid).to_json()
        return {p: self.records[p].to_json() for p in sorted(self.records)}
