"""Access decisions: misbehavior screening, then deny-overrides over applicable policies."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import Mapping, Optional, Sequence

from .dsl import DENY, PERMIT, PolicyDoc, eval_expr, is_attribute_path, scope_covers
from .errors import NotFoundError
from .generator import ViolationEvent
from .records import ActorRecord, ContextRecord
from .store import StoreSnapshot, resolve_actor, resolve_context

DEFAULT_DENY = "default-deny"
MISBEHAVIOR_HISTORY = "misbehavior-history"
TAMPERED_CAPSULE = "tampered-capsule"


class Outcome(str, Enum):
    DENY = "Deny"
    PARTIAL_PERMIT = "PartialPermit"
    FULL_PERMIT = "FullPermit"


class Standing(str, Enum):
    CLEAN = "clean"
    TAINTED = "tainted"


@dataclass(frozen=True)
class AccessRequest:
    actor_id: str
    claimed_role: str
    context_id: str
    resource_id: str
    requested_actions: frozenset[str]
    at: datetime
    system_attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "requested_actions", frozenset(self.requested_actions))
        if not self.requested_actions:
            raise ValueError("an access request needs at least one action")


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    granted_actions: frozenset[str]
    reasons: tuple[tuple[str, str], ...]

    def to_json(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "grantedActions": sorted(self.granted_actions),
            "reasons": [{"code": code, "explanation": text} for code, text in self.reasons],
        }


def outcome_for(requested: frozenset[str], granted: frozenset[str]) -> Outcome:
    if not granted:
        return Outcome.DENY
    if granted == requested:
        return Outcome.FULL_PERMIT
    return Outcome.PARTIAL_PERMIT


def deny(code: str, explanation: str) -> Decision:
    return Decision(Outcome.DENY, frozenset(), ((code, explanation),))


def build_env(
    request: AccessRequest,
    actor: Optional[ActorRecord],
    context: Optional[ContextRecord],
    action: Optional[str] = None,
) -> dict[str, str]:
    """Attribute environment for expression evaluation.

    Context parameters are exposed under their own dotted keys; the request's
    system attributes take precedence over recorded ones.
    """
    env = {"Actor.ID": request.actor_id, "Operation.resourceId": request.resource_id}
    if actor is not None:
        env["Actor.name"] = actor.name
        env["Actor.role"] = actor.role
    if context is not None:
        env.update(context.parameter)
        env["Context.id"] = context.id
        env["Context.state"] = context.state
    env.update(request.system_attributes)
    if action is not None:
        env["Operation.description"] = action
    return env


def expires_at(policy: PolicyDoc) -> Optional[datetime]:
    if not policy.obligations:
        return None
    return min(policy.issued_at + timedelta(days=ob.days) for ob in policy.obligations)


def subject_matches(policy: PolicyDoc, request: AccessRequest, env: Mapping[str, str]) -> bool:
    subject = policy.target.subject
    if is_attribute_path(subject):
        return env.get(subject) == request.actor_id
    return subject == request.actor_id


def applicable(policy: PolicyDoc, request: AccessRequest, env: Mapping[str, str], now: datetime) -> bool:
    if not subject_matches(policy, request, env):
        return False
    if eval_expr(policy.target.restriction, env) is not True:
        return False
    if eval_expr(policy.condition, env) is not True:
        return False
    expiry = expires_at(policy)
    return expiry is None or now < expiry


def misbehavior_check(
    request: AccessRequest, snapshot: StoreSnapshot, violations: Sequence[ViolationEvent]
) -> Standing:
    try:
        actor = resolve_actor(request.actor_id, snapshot)
    except NotFoundError:
        return Standing.TAINTED
    if actor.role != request.claimed_role:
        return Standing.TAINTED
    for event in violations:
        if event.actor_id == request.actor_id and event.context_id == request.context_id:
            return Standing.TAINTED
    return Standing.CLEAN


def _taint_explanation(request: AccessRequest, snapshot: StoreSnapshot) -> str:
    try:
        actor = resolve_actor(request.actor_id, snapshot)
    except NotFoundError:
        return f"unknown actor {request.actor_id}"
    if actor.role != request.claimed_role:
        return f"claimed role {request.claimed_role} differs from recorded role {actor.role}"
    return f"{request.actor_id} misbehaved as {actor.role} under context {request.context_id}"


def decide(
    request: AccessRequest,
    policies: Sequence[PolicyDoc],
    snapshot: StoreSnapshot,
    violations: Sequence[ViolationEvent],
    now: datetime,
) -> Decision:
    if misbehavior_check(request, snapshot, violations) is Standing.TAINTED:
        return deny(MISBEHAVIOR_HISTORY, _taint_explanation(request, snapshot))

    actor = resolve_actor(request.actor_id, snapshot)
    try:
        context: Optional[ContextRecord] = resolve_context(request.context_id, snapshot)
    except NotFoundError:
        context = None

    actions = sorted(request.requested_actions)
    permitted: set[str] = set()
    denied: set[str] = set()
    reasons: list[tuple[str, str]] = []
    for policy in policies:
        hits = []
        for action in actions:
            if not scope_covers(policy.target.record, action):
                continue
            env = build_env(request, actor, context, action)
            if applicable(policy, request, env, now):
                hits.append(action)
        if policy.effect == PERMIT:
            permitted.update(hits)
        elif policy.effect == DENY:
            denied.update(hits)
        if hits:
            reasons.append((policy.id, f"{policy.effect} applies to {','.join(hits)}"))
        else:
            reasons.append((policy.id, "not applicable"))

    granted = frozenset(permitted - denied)
    uncovered = [a for a in actions if a not in permitted and a not in denied]
    if uncovered:
        reasons.append((DEFAULT_DENY, f"no applicable policy for {','.join(uncovered)}"))
    return Decision(outcome_for(request.requested_actions, granted), granted, tuple(reasons))
