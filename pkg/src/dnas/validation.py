"""Multi-layer product validation and the evidence -> attack-class table.

Checks run in a fixed order and are always all evaluated, so the evidence set
does not depend on short-circuiting:

=================  ====================================================
id                 fails when
=================  ====================================================
readable           the tag could not be read (disabled)
product_known      no on-chain product for the expected pid
signature          tag signature over (uid || payload) does not verify
                   under the on-chain key of the payload's writer
binding            sha256 binding of (uid, expected pid) differs from
                   the on-chain tag_uid_digest
payload_digest     sha256(payload) differs from the on-chain digest
write_count        tag write counter != on-chain write_count
read_count         tag read counter < this node's off-chain shadow
status             on-chain status is not Registered/InTransit
=================  ====================================================

Decision table (a class "matches" when its rule holds; ties are broken by
priority Modification > Reapplication > Clone > StatusViolation):

* ModificationDetected: (signature or payload_digest) and not binding
* ReapplicationDetected: binding and (payload_digest or not signature)
* CloneDetected: (binding and signature) or any counter check
* StatusViolation: status
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

from .errors import ChainUnavailable, UnknownPid
from .registry import RegistryState, Status
from .store import PEDIGREE, SUPPLY_CHAIN, ProvenanceStore
from .tag import TagPayload, TagRead, payload_digest, signature_valid, uid_binding_digest


class Outcome(str, enum.Enum):
    GENUINE = "Genuine"
    CLONE = "CloneDetected"
    MODIFICATION = "ModificationDetected"
    REAPPLICATION = "ReapplicationDetected"
    UNREADABLE = "TagUnreadable"
    UNKNOWN_PRODUCT = "UnknownProduct"
    STATUS_VIOLATION = "StatusViolation"


CHECKS = ("readable", "product_known", "signature", "binding", "payload_digest", "write_count", "read_count",
          "status")
ADMISSIBLE = frozenset({Status.REGISTERED, Status.IN_TRANSIT})
PRIORITY = (Outcome.MODIFICATION, Outcome.REAPPLICATION, Outcome.CLONE, Outcome.STATUS_VIOLATION)


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    evidence: tuple[str, ...] = ()
    pid: str = ""
    node: str = ""

    def __post_init__(self) -> None:
        if (self.outcome is Outcome.GENUINE) != (not self.evidence):
            raise ValueError("Genuine verdicts carry no evidence; all others carry some")

    @property
    def genuine(self) -> bool:
        return self.outcome is Outcome.GENUINE

    def to_json(self) -> dict[str, object]:
        return {"outcome": self.outcome.value, "evidence": list(self.evidence), "pid": self.pid, "node": self.node}


def _matches(outcome: Outcome, ev: frozenset[str]) -> bool:
    if outcome is Outcome.MODIFICATION:
        return bool(ev & {"signature", "payload_digest"}) and "binding" not in ev
    if outcome is Outcome.REAPPLICATION:
        return "binding" in ev and ("payload_digest" in ev or "signature" not in ev)
    if outcome is Outcome.CLONE:
        return {"binding", "signature"} <= ev or bool(ev & {"write_count", "read_count"})
    if outcome is Outcome.STATUS_VIOLATION:
        return "status" in ev
    return False


def classify_evidence(failed: Iterable[str]) -> Outcome:
    ev = frozenset(failed)
    if not ev:
        raise ValueError("classify_evidence needs at least one failed check")
    unknown = ev - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown check ids {sorted(unknown)}")
    if "readable" in ev:
        return Outcome.UNREADABLE
    if "product_known" in ev:
        return Outcome.UNKNOWN_PRODUCT
    for outcome in PRIORITY:
        if _matches(outcome, ev):
            return outcome
    raise AssertionError(f"decision table does not cover {sorted(ev)}")


def run_checks(read: TagRead | None, expected_pid: str, state: RegistryState,
               store: ProvenanceStore | None) -> list[str]:
    """Evaluate every check; returns the failing ids in check order."""
    if read is None:
        return ["readable"]
    try:
        product = state.query_product(expected_pid)
    except UnknownPid:
        return ["product_known"]
    failed = []
    writer_key = state.public_key_of(product.writer)
    if writer_key is None or not signature_valid(read, writer_key):
        failed.append("signature")
    if uid_binding_digest(read.uid, expected_pid) != product.tag_uid_digest:
        failed.append("binding")
    if payload_digest(read.payload) != product.payload_digest:
        failed.append("payload_digest")
    if read.write_count != product.write_count:
        failed.append("write_count")
    shadow_read = store.shadows(expected_pid)[0] if store is not None else 0
    if read.read_count < shadow_read:
        failed.append("read_count")
    if product.status not in ADMISSIBLE:
        failed.append("status")
    return failed


def validate_product(read: TagRead | None, expected_pid: str, state: RegistryState | None,
                     store: ProvenanceStore | None = None, *, node: str = "", time: int = 0,
                     step: str = "receive") -> Verdict:
    """Validate one tag read against on-chain state and this node's store.

    Success advances the store's shadow counters and records a validation
    entry; failure is appended to the store's unsuccessful validations.
    """
    if state is None:
        raise ChainUnavailable(f"{node or 'node'} has no finalized tip")
    failed = run_checks(read, expected_pid, state, store)
    if not failed:
        verdict = Verdict(Outcome.GENUINE, (), expected_pid, node)
        if store is not None:
            assert read is not None
            payload = TagPayload.decode(read.payload)
            record = store.records.get(expected_pid)
            if record is None or not record.pedigree:
                store.upsert_record(expected_pid, PEDIGREE, payload.pedigree())
            store.sync_shadows(expected_pid, read.read_count, read.write_count)
            store.upsert_record(expected_pid, SUPPLY_CHAIN, {
                "node": node, "type": "validation", "step": step, "time": time,
                "write_count": read.write_count, "read_count": read.read_count})
        return verdict
    verdict = Verdict(classify_evidence(failed), tuple(failed), expected_pid, node)
    if store is not None:
        context = {"node": node, "time": time, "step": step}
        if read is not None:
            context["uid"] = read.uid.hex()
        store.record_unsuccessful(expected_pid, verdict, context)
    return verdict
