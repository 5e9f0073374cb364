"""The gate service: owner uploads, policy regeneration, mediated access, audit.

Layout of ``data_dir``::

    provenance.jsonl             the provenance store
    capsules/<id>.json           capsule metadata and attached policies
    capsules/<id>.bin            payload bytes
    seals/<id>.json              owner id and the digests the service has sealed
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Optional, Union

from .capsule import (
    Capsule,
    Integrity,
    capsule_paths,
    next_operation_id,
    read_capsule,
    record_access,
    seal,
    sha256_hex,
    verify,
    write_capsule,
)
from .errors import NotFoundError, ProvGateError, ResourceExistsError, ServiceError
from .evaluator import (
    DEFAULT_DENY,
    TAMPERED_CAPSULE,
    AccessRequest,
    Decision,
    decide,
    deny,
)
from .generator import (
    GenConfig,
    SealHistory,
    ViolationEvent,
    build_policy_records,
    detect_violations,
    generate_policies,
    generation_report,
    preference_to_policy,
)
from .records import ActorRecord, ContextRecord, OperationRecord, PreferenceRecord, canonical_serialize
from .store import ProvenanceStore, QueryFilter, StoreSnapshot, query, resolve_actor
from .timefmt import now_utc, parse_timestamp

log = logging.getLogger(__name__)

RESOURCE_ID_RE = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_.-]*")
UPLOAD_CONTEXT = "owner-upload"


class Clock:
    """Wall clock, or a fixed instant that only moves when told to."""

    def __init__(self, fixed: Optional[datetime] = None):
        self._fixed = fixed

    @property
    def is_fixed(self) -> bool:
        return self._fixed is not None

    def now(self) -> datetime:
        return self._fixed if self._fixed is not None else now_utc()

    def advance(self, delta: timedelta) -> None:
        if self._fixed is None:
            raise ServiceError("only a fixed clock can be advanced")
        self._fixed += delta


@dataclass
class ServiceConfig:
    data_dir: Path
    gen_config: GenConfig = field(default_factory=GenConfig)
    listen_address: str = "127.0.0.1:8080"
    fixed_clock: Optional[datetime] = None

    @classmethod
    def from_file(
        cls,
        path: Union[str, os.PathLike, None],
        data_dir: Union[str, os.PathLike],
        fixed_clock: Optional[datetime] = None,
    ) -> "ServiceConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
        gen_kwargs = {}
        if "violationVocabulary" in raw:
            gen_kwargs["violation_vocabulary"] = frozenset(raw["violationVocabulary"])
        if "defaultTemporalDays" in raw:
            gen_kwargs["default_temporal_days"] = raw["defaultTemporalDays"]
        if "permittedScope" in raw:
            gen_kwargs["permitted_scope"] = frozenset(raw["permittedScope"])
        if fixed_clock is None and raw.get("fixedClock"):
            fixed_clock = parse_timestamp(raw["fixedClock"])
        return cls(
            data_dir=Path(data_dir),
            gen_config=GenConfig(**gen_kwargs),
            listen_address=raw.get("listenAddress", "127.0.0.1:8080"),
            fixed_clock=fixed_clock,
        )


@dataclass(frozen=True)
class AccessResult:
    decision: Decision
    operation: OperationRecord
    payload: Optional[bytes] = None


@dataclass(frozen=True)
class AuditTrail:
    resource_id: str
    operations: tuple[OperationRecord, ...]
    violations: tuple[ViolationEvent, ...]
    report: str

    def render(self) -> str:
        lines = [canonical_serialize(op) for op in self.operations]
        return "\n".join(lines) + ("\n" if lines else "") + self.report


class GateService:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.clock = Clock(config.fixed_clock)
        self.data_dir = Path(config.data_dir)
        self.capsule_dir = self.data_dir / "capsules"
        self.seal_dir = self.data_dir / "seals"
        self.capsule_dir.mkdir(parents=True, exist_ok=True)
        self.seal_dir.mkdir(exist_ok=True)
        self.store = ProvenanceStore(self.data_dir / "provenance.jsonl")
        self._lock = threading.RLock()

    # -- seeding ---------------------------------------------------------

    def add_actor(self, actor_id: str, name: str, role: str) -> int:
        return self.store.append(ActorRecord(actor_id, name, role))

    def add_context(self, context_id: str, state: str, parameter: Optional[dict[str, str]] = None) -> int:
        return self.store.append(ContextRecord(context_id, state, dict(parameter or {})))

    def add_preference(
        self, pref_id: str, target: str, condition: str, effect: str, obligations: tuple[str, ...] = ()
    ) -> int:
        return self.store.append(
            PreferenceRecord(pref_id, target, condition, effect, tuple(obligations), self.clock.now())
        )

    # -- resource bookkeeping ---------------------------------------------

    def _history_path(self, resource_id: str) -> Path:
        return self.seal_dir / f"{resource_id}.json"

    def _read_history(self, resource_id: str) -> dict:
        return json.loads(self._history_path(resource_id).read_text(encoding="utf-8"))

    def _write_history(self, resource_id: str, history: dict) -> None:
        self._history_path(resource_id).write_text(json.dumps(history) + "\n", encoding="utf-8")

    def _note_seal(self, resource_id: str, from_sequence: int, digest: str) -> None:
        history = self._read_history(resource_id)
        if not history["seals"] or history["seals"][-1][1] != digest:
            history["seals"].append([from_sequence, digest])
            self._write_history(resource_id, history)

    def resources(self) -> list[str]:
        return sorted(p.stem for p in self.seal_dir.glob("*.json"))

    def _require_resource(self, resource_id: str) -> None:
        if not RESOURCE_ID_RE.fullmatch(resource_id) or not self._history_path(resource_id).exists():
            raise NotFoundError(f"unknown resource {resource_id!r}")

    def seal_histories(self) -> dict[str, SealHistory]:
        return {
            rid: [tuple(entry) for entry in self._read_history(rid)["seals"]] for rid in self.resources()
        }

    def _ensure_upload_context(self) -> None:
        snapshot = self.store.snapshot()
        if not any(isinstance(r, ContextRecord) and r.id == UPLOAD_CONTEXT for r in snapshot.records):
            self.add_context(UPLOAD_CONTEXT, "upload")

    # -- endpoints -------------------------------------------------------

    def upload_resource(
        self, resource_id: str, payload: bytes, owner_actor_id: str, context_id: Optional[str] = None
    ) -> dict:
        with self._lock:
            if not RESOURCE_ID_RE.fullmatch(resource_id or ""):
                raise ServiceError(f"invalid resource id {resource_id!r}")
            snapshot = self.store.snapshot()
            resolve_actor(owner_actor_id, snapshot)
            if self._history_path(resource_id).exists() or capsule_paths(self.capsule_dir, resource_id)[0].exists():
                raise ResourceExistsError(f"resource {resource_id!r} already exists")
            if context_id is None:
                self._ensure_upload_context()
                context_id = UPLOAD_CONTEXT
                snapshot = self.store.snapshot()
            elif not any(isinstance(r, ContextRecord) and r.id == context_id for r in snapshot.records):
                raise NotFoundError(f"unknown context {context_id!r}")

            now = self.clock.now()
            prefs = [r for r in snapshot.records if isinstance(r, PreferenceRecord)]
            policies = [preference_to_policy(p, self.config.gen_config) for p in sorted(prefs, key=lambda p: p.id)]
            capsule = seal(resource_id, payload, policies, now)
            sequence = self.store.high_water_mark + 1
            write_capsule(self.capsule_dir, capsule, payload)
            self._write_history(resource_id, {"owner": owner_actor_id, "seals": [[sequence, capsule.payload_digest]]})
            try:
                self.store.append(
                    OperationRecord(
                        id=next_operation_id(self.store),
                        actor_id=owner_actor_id,
                        context_id=context_id,
                        description="upload",
                        output=capsule.payload_digest,
                        resource_id=resource_id,
                        timestamp=now,
                    )
                )
            except ProvGateError:
                for path in (*capsule_paths(self.capsule_dir, resource_id), self._history_path(resource_id)):
                    path.unlink(missing_ok=True)
                raise
            log.info("uploaded %s for owner %s with %d policies", resource_id, owner_actor_id, len(policies))
            return {
                "resourceId": resource_id,
                "payloadDigest": capsule.payload_digest,
                "policyDigest": capsule.policy_digest,
                "sealDigest": capsule.seal_digest,
                "policies": len(policies),
            }

    def request_access(self, request: AccessRequest, payload: Optional[bytes] = None) -> AccessResult:
        """Verify, decide, apply and log one request; verify-to-log is atomic."""
        with self._lock:
            self._require_resource(request.resource_id)
            rid = request.resource_id
            capsule: Optional[Capsule] = None
            data: Optional[bytes] = None
            try:
                capsule, data = read_capsule(self.capsule_dir, rid)
                integrity = verify(capsule, data)
            except (OSError, ValueError, KeyError, TypeError) as exc:
                integrity = Integrity(False, f"capsule-unreadable: {exc}")
                bin_path = capsule_paths(self.capsule_dir, rid)[1]
                data = bin_path.read_bytes() if bin_path.exists() else None

            now = self.clock.now()
            if not integrity.intact:
                decision = deny(TAMPERED_CAPSULE, str(integrity))
            else:
                try:
                    snapshot = self.store.snapshot()
                    violations = detect_violations(snapshot, self.seal_histories(), self.config.gen_config)
                    decision = decide(request, capsule.policies, snapshot, violations, now)
                except Exception as exc:  # fail closed
                    log.exception("evaluation failed for %s", rid)
                    decision = deny(DEFAULT_DENY, f"internal error: {exc}")

            post_digest = sha256_hex(data) if data is not None else capsule.payload_digest if capsule else sha256_hex(b"")
            owner_write = False
            if "write" in decision.granted_actions and payload is not None:
                capsule_paths(self.capsule_dir, rid)[1].write_bytes(payload)
                data = payload
                post_digest = sha256_hex(payload)
                owner_write = self._read_history(rid)["owner"] == request.actor_id

            record = record_access(capsule, request, decision, post_digest, self.store)
            if owner_write:
                # owners may change their own data; everyone else's changes stay unsealed
                resealed = seal(rid, data, capsule.policies, now)
                write_capsule(self.capsule_dir, resealed)
                self._note_seal(rid, self.store.high_water_mark, resealed.payload_digest)

            returned = data if "read" in decision.granted_actions else None
            return AccessResult(decision, record, returned)

    def regenerate_policies(self, resource_id: Optional[str] = None) -> int:
        with self._lock:
            targets = self.resources()
            if resource_id is not None:
                targets = [resource_id] if resource_id in targets else []
            if not targets:
                return 0
            snapshot = self.store.snapshot()
            violations = detect_violations(snapshot, self.seal_histories(), self.config.gen_config)
            policy_records = build_policy_records(snapshot, violations)
            prefs = [r for r in snapshot.records if isinstance(r, PreferenceRecord)]
            now = self.clock.now()
            attached = 0
            for rid in targets:
                docs = generate_policies(
                    [p for p in policy_records if p.resource_id == rid],
                    [v for v in violations if v.resource_id == rid],
                    self.config.gen_config,
                    now,
                    prefs,
                )
                data = capsule_paths(self.capsule_dir, rid)[1].read_bytes()
                capsule = seal(rid, data, docs, now)
                write_capsule(self.capsule_dir, capsule)
                self._note_seal(rid, snapshot.high_water_mark + 1, capsule.payload_digest)
                attached += len(docs)
                log.info("attached %d policies to %s", len(docs), rid)
            return attached

    def get_audit_trail(self, resource_id: str) -> AuditTrail:
        with self._lock:
            self._require_resource(resource_id)
            snapshot = self.store.snapshot()
            ops = query(QueryFilter(resource_id=resource_id, kind="operation"), snapshot)
            violations = [
                v
                for v in detect_violations(snapshot, self.seal_histories(), self.config.gen_config)
                if v.resource_id == resource_id
            ]
            return AuditTrail(resource_id, tuple(ops), tuple(violations), generation_report(violations, snapshot))

    def verify_resource(self, resource_id: str) -> Integrity:
        with self._lock:
            self._require_resource(resource_id)
            try:
                capsule, data = read_capsule(self.capsule_dir, resource_id)
            except (OSError, ValueError, KeyError, TypeError) as exc:
                return Integrity(False, f"capsule-unreadable: {exc}")
            return verify(capsule, data)

    def snapshot(self) -> StoreSnapshot:
        return self.store.snapshot()
