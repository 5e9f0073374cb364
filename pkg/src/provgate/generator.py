"""Policy generation: provenance records -> policy records -> policy documents."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Optional, Sequence

from .dsl import (
    ALL_OPERATIONS,
    DENY,
    PERMIT,
    Comparison,
    Conjunction,
    Expr,
    Obligation,
    PolicyDoc,
    Target,
    conjoin,
    parse_expr,
)
from .errors import DanglingReferenceError
from .records import (
    OBLIGATION_TEXT_RE,
    ActorRecord,
    ContextRecord,
    OperationRecord,
    PreferenceRecord,
)
from .store import StoreSnapshot
from .timefmt import format_timestamp

DIGEST_MISMATCH = "digest-mismatch"
FLAGGED_DESCRIPTION = "flagged-description"
DENIED_PREFIX = "denied-"

# Actor.ID is always present in an evaluation environment, so this never fails.
_ALWAYS = Comparison("Actor.ID", "!=", "")

# (first sequence number the digest is in force for, digest)
SealHistory = Sequence[tuple[int, str]]


@dataclass(frozen=True)
class PolicyRecord:
    actor_id: str
    role: str
    context_id: str
    resource_id: str
    timestamp: datetime
    operation_descriptions: frozenset[str]
    violation_count: int = 0

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.actor_id, self.context_id, self.resource_id)


@dataclass(frozen=True)
class ViolationEvent:
    operation_id: str
    actor_id: str
    context_id: str
    resource_id: str
    reason: str
    timestamp: datetime

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.actor_id, self.context_id, self.resource_id)


@dataclass(frozen=True)
class GenConfig:
    violation_vocabulary: frozenset[str] = field(
        default_factory=lambda: frozenset({"alter", "corrupt", "delete-unauthorized"})
    )
    default_temporal_days: int = 10
    permitted_scope: frozenset[str] = field(default_factory=lambda: frozenset({"read", "write"}))

    def __post_init__(self) -> None:
        if not isinstance(self.default_temporal_days, int) or self.default_temporal_days < 1:
            raise ValueError("default_temporal_days must be a positive integer")
        if not self.permitted_scope:
            raise ValueError("permitted_scope must not be empty")
        object.__setattr__(self, "violation_vocabulary", frozenset(self.violation_vocabulary))
        object.__setattr__(self, "permitted_scope", frozenset(self.permitted_scope))


def description_parts(description: str) -> list[str]:
    """A logged description lists one entry per requested action, comma separated."""
    return description.split(",")


def performed_actions(description: str) -> list[str]:
    return [p for p in description_parts(description) if not p.startswith(DENIED_PREFIX)]


def expected_digest(history: SealHistory, sequence: int) -> Optional[str]:
    digest = None
    for start, value in sorted(history):
        if start > sequence:
            break
        digest = value
    return digest


def build_policy_records(
    snapshot: StoreSnapshot, violations: Iterable[ViolationEvent] = ()
) -> list[PolicyRecord]:
    """Join operations with actors and group by (actor, context, resource).

    ``violations`` only feeds ``violation_count``.
    """
    actors: dict[str, ActorRecord] = {}
    contexts: set[str] = set()
    for record in snapshot.records:
        if isinstance(record, ActorRecord):
            actors[record.id] = record
        elif isinstance(record, ContextRecord):
            contexts.add(record.id)

    groups: dict[tuple[str, str, str], list[OperationRecord]] = defaultdict(list)
    for record in snapshot.records:
        if not isinstance(record, OperationRecord):
            continue
        if record.actor_id not in actors:
            raise DanglingReferenceError(f"operation {record.id!r} cites unknown actor {record.actor_id!r}")
        if record.context_id not in contexts:
            raise DanglingReferenceError(
                f"operation {record.id!r} cites unknown context {record.context_id!r}"
            )
        groups[(record.actor_id, record.context_id, record.resource_id)].append(record)

    violating = {v.operation_id for v in violations}
    out = []
    for key in sorted(groups):
        ops = groups[key]
        actor_id, context_id, resource_id = key
        out.append(
            PolicyRecord(
                actor_id=actor_id,
                role=actors[actor_id].role,
                context_id=context_id,
                resource_id=resource_id,
                timestamp=max(op.timestamp for op in ops),
                operation_descriptions=frozenset(op.description for op in ops),
                violation_count=sum(1 for op in ops if op.id in violating),
            )
        )
    return out


def detect_violations(
    snapshot: StoreSnapshot,
    seals: Mapping[str, SealHistory],
    config: GenConfig,
) -> list[ViolationEvent]:
    """Flag operations that performed a vocabulary action or left an unsealed digest.

    Fully denied operations changed nothing and are never flagged. Resources
    without a seal history are only checked against the vocabulary.
    """
    events = []
    for sequence, record in enumerate(snapshot.records, start=1):
        if not isinstance(record, OperationRecord):
            continue
        performed = performed_actions(record.description)
        if not performed:
            continue
        reason = None
        if any(action in config.violation_vocabulary for action in performed):
            reason = FLAGGED_DESCRIPTION
        elif record.resource_id in seals:
            expected = expected_digest(seals[record.resource_id], sequence)
            if expected is not None and record.output != expected:
                reason = DIGEST_MISMATCH
        if reason:
            events.append(
                ViolationEvent(
                    operation_id=record.id,
                    actor_id=record.actor_id,
                    context_id=record.context_id,
                    resource_id=record.resource_id,
                    reason=reason,
                    timestamp=record.timestamp,
                )
            )
    return events


def generated_policy_id(actor_id: str, context_id: str, resource_id: str) -> str:
    return f"gen-{actor_id}-{context_id}-{resource_id}"


def preference_to_policy(pref: PreferenceRecord, config: GenConfig) -> PolicyDoc:
    """Turn an owner preference into a policy document.

    ``Actor.*`` comparisons of the preference condition become the target
    restriction; the remaining comparisons stay in the condition.
    """
    expr = parse_expr(pref.condition)
    terms = expr.terms if isinstance(expr, Conjunction) else (expr,)
    actor_terms = [t for t in terms if t.path.startswith("Actor.")]
    other_terms = [t for t in terms if not t.path.startswith("Actor.")]
    obligations = []
    for text in pref.obligations:
        m = OBLIGATION_TEXT_RE.fullmatch(text)
        if m is None:
            raise ValueError(f"malformed obligation {text!r} in preference {pref.id!r}")
        obligations.append(Obligation(int(m.group(1))))
    scope = frozenset({ALL_OPERATIONS}) if pref.effect == DENY else config.permitted_scope
    return PolicyDoc(
        id=f"pref-{pref.id}",
        target=Target(pref.target, scope, conjoin(*actor_terms) if actor_terms else _ALWAYS),
        condition=conjoin(*other_terms) if other_terms else _ALWAYS,
        effect=pref.effect,
        obligations=tuple(obligations),
        issued_at=pref.timestamp,
    )


def generate_policies(
    policy_records: Sequence[PolicyRecord],
    violations: Sequence[ViolationEvent],
    config: GenConfig,
    now: datetime,
    preferences: Sequence[PreferenceRecord] = (),
) -> list[PolicyDoc]:
    """One Deny document per violated triple, one Permit per clean triple.

    Deny preferences are appended after the generated documents.
    """
    roles: dict[tuple[str, str, str], str] = {}
    actor_roles: dict[str, str] = {}
    for pr in policy_records:
        roles[pr.triple] = pr.role
        actor_roles[pr.actor_id] = pr.role
    violated = {v.triple for v in violations}

    docs = []
    for triple in sorted(set(roles) | violated):
        actor_id, context_id, resource_id = triple
        role = roles.get(triple, actor_roles.get(actor_id))
        restriction: Expr = (
            Comparison("Actor.role", "==", role)
            if role is not None
            else Comparison("Actor.ID", "==", actor_id)
        )
        condition = Comparison("Context.id", "==", context_id)
        if triple in violated:
            docs.append(
                PolicyDoc(
                    id=generated_policy_id(*triple),
                    target=Target(actor_id, frozenset({ALL_OPERATIONS}), restriction),
                    condition=condition,
                    effect=DENY,
                    obligations=(),
                    issued_at=now,
                )
            )
        else:
            docs.append(
                PolicyDoc(
                    id=generated_policy_id(*triple),
                    target=Target(actor_id, config.permitted_scope, restriction),
                    condition=condition,
                    effect=PERMIT,
                    obligations=(Obligation(config.default_temporal_days),),
                    issued_at=now,
                )
            )
    for pref in sorted(preferences, key=lambda p: p.id):
        if pref.effect == DENY:
            docs.append(preference_to_policy(pref, config))
    return docs


def generation_report(violations: Sequence[ViolationEvent], snapshot: StoreSnapshot) -> str:
    """Answer, per violation: who is accountable, in which role, when, under what context."""
    actors = {r.id: r for r in snapshot.records if isinstance(r, ActorRecord)}
    contexts = {r.id: r for r in snapshot.records if isinstance(r, ContextRecord)}
    if not violations:
        return "generation report: no violations\n"
    lines = [f"generation report: {len(violations)} violation(s)"]
    for n, event in enumerate(violations, start=1):
        actor = actors.get(event.actor_id)
        context = contexts.get(event.context_id)
        lines += [
            f"violation {n}: operation {event.operation_id} on resource {event.resource_id} ({event.reason})",
            f"  accountable user: {event.actor_id}" + (f" ({actor.name})" if actor else " (unknown actor)"),
            f"  role: {actor.role if actor else 'unknown'}",
            f"  time instant: {format_timestamp(event.timestamp)}",
            f"  context: {event.context_id}" + (f" (state: {context.state})" if context else ""),
        ]
    return "\n".join(lines) + "\n"
