"""Digest-sealed capsules binding a resource's bytes to its attached policies.

payloadDigest = sha256(payload)
policyDigest  = sha256(concatenated canonical policy texts)
sealDigest    = sha256(resourceId || payloadDigest || policyDigest)

All digests are lowercase hex SHA-256.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from .dsl import PolicyDoc, parse_policy, serialize_policy
from .evaluator import AccessRequest, Decision
from .records import OperationRecord
from .store import ProvenanceStore
from .timefmt import format_timestamp, parse_timestamp

PAYLOAD_MISMATCH = "payload-digest-mismatch"
POLICY_MISMATCH = "policy-digest-mismatch"
SEAL_MISMATCH = "seal-digest-mismatch"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def policy_digest(texts: Sequence[str]) -> str:
    return sha256_hex("".join(texts).encode("utf-8", "surrogatepass"))


def seal_digest(resource_id: str, payload_digest: str, policy_digest: str) -> str:
    return sha256_hex((resource_id + payload_digest + policy_digest).encode("utf-8"))


@dataclass(frozen=True)
class Capsule:
    resource_id: str
    payload_digest: str
    policy_digest: str
    seal_digest: str
    created_at: datetime
    policy_texts: tuple[str, ...]

    @property
    def policies(self) -> list[PolicyDoc]:
        return [parse_policy(text) for text in self.policy_texts]

    def to_json(self) -> dict:
        return {
            "resourceId": self.resource_id,
            "payloadDigest": self.payload_digest,
            "policyDigest": self.policy_digest,
            "sealDigest": self.seal_digest,
            "createdAt": format_timestamp(self.created_at),
            "policies": list(self.policy_texts),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Capsule":
        return cls(
            resource_id=obj["resourceId"],
            payload_digest=obj["payloadDigest"],
            policy_digest=obj["policyDigest"],
            seal_digest=obj["sealDigest"],
            created_at=parse_timestamp(obj["createdAt"]),
            policy_texts=tuple(obj["policies"]),
        )


@dataclass(frozen=True)
class Integrity:
    intact: bool
    reason: Optional[str] = None

    def __str__(self) -> str:
        return "intact" if self.intact else f"tampered({self.reason})"


INTACT = Integrity(True)


def seal(resource_id: str, payload: bytes, policies: Sequence[PolicyDoc], now: datetime) -> Capsule:
    if not resource_id:
        raise ValueError("resource id must not be empty")
    texts = tuple(serialize_policy(p) for p in policies)
    payload_d = sha256_hex(payload)
    policy_d = policy_digest(texts)
    return Capsule(
        resource_id=resource_id,
        payload_digest=payload_d,
        policy_digest=policy_d,
        seal_digest=seal_digest(resource_id, payload_d, policy_d),
        created_at=now,
        policy_texts=texts,
    )


def verify(capsule: Capsule, payload: bytes) -> Integrity:
    if sha256_hex(payload) != capsule.payload_digest:
        return Integrity(False, PAYLOAD_MISMATCH)
    if policy_digest(capsule.policy_texts) != capsule.policy_digest:
        return Integrity(False, POLICY_MISMATCH)
    if seal_digest(capsule.resource_id, capsule.payload_digest, capsule.policy_digest) != capsule.seal_digest:
        return Integrity(False, SEAL_MISMATCH)
    return INTACT


def access_description(request: AccessRequest, decision: Decision) -> str:
    return ",".join(
        action if action in decision.granted_actions else f"denied-{action}"
        for action in sorted(request.requested_actions)
    )


def next_operation_id(store: ProvenanceStore) -> str:
    return f"op-{store.high_water_mark + 1:06d}"


def record_access(
    capsule: Optional[Capsule],
    request: AccessRequest,
    decision: Decision,
    post_payload_digest: str,
    store: ProvenanceStore,
    operation_id: Optional[Callable[[ProvenanceStore], str]] = None,
) -> OperationRecord:
    """Log one access, whatever its outcome, as an operation record.

    ``capsule`` may be None when the capsule could not even be read.
    """
    record = OperationRecord(
        id=(operation_id or next_operation_id)(store),
        actor_id=request.actor_id,
        context_id=request.context_id,
        description=access_description(request, decision),
        output=post_payload_digest,
        resource_id=capsule.resource_id if capsule is not None else request.resource_id,
        timestamp=request.at,
    )
    store.append(record)
    return record


def capsule_paths(directory: Union[str, os.PathLike], resource_id: str) -> tuple[Path, Path]:
    directory = Path(directory)
    return directory / f"{resource_id}.json", directory / f"{resource_id}.bin"


def write_capsule(directory: Union[str, os.PathLike], capsule: Capsule, payload: Optional[bytes] = None) -> None:
    meta_path, bin_path = capsule_paths(directory, capsule.resource_id)
    if payload is not None:
        bin_path.write_bytes(payload)
    meta_path.write_text(json.dumps(capsule.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def read_capsule(directory: Union[str, os.PathLike], resource_id: str) -> tuple[Capsule, bytes]:
    meta_path, bin_path = capsule_paths(directory, resource_id)
    capsule = Capsule.from_json(json.loads(meta_path.read_text(encoding="utf-8")))
    return capsule, bin_path.read_bytes()
