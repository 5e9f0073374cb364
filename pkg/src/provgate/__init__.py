"""Provenance-policy based access control: provenance store, policy generation,
policy evaluation and digest-sealed data capsules."""

from .capsule import Capsule, Integrity, record_access, seal, verify
from .dsl import (
    ALL_OPERATIONS,
    Comparison,
    Conjunction,
    Obligation,
    PolicyDoc,
    Target,
    eval_expr,
    parse_expr,
    parse_policy,
    serialize_policy,
)
from .evaluator import AccessRequest, Decision, Outcome, Standing, applicable, decide, misbehavior_check
from .generator import (
    GenConfig,
    PolicyRecord,
    ViolationEvent,
    build_policy_records,
    detect_violations,
    generate_policies,
    generation_report,
)
from .records import (
    ActorRecord,
    ContextRecord,
    MessageRecord,
    OperationRecord,
    PreferenceRecord,
    canonical_serialize,
    parse_record,
    validate_record,
)
from .service import GateService, ServiceConfig
from .store import ProvenanceStore, QueryFilter, StoreSnapshot, load, query, resolve_actor

__version__ = "0.1.0"

__all__ = [
    "ALL_OPERATIONS",
    "AccessRequest",
    "ActorRecord",
    "Capsule",
    "Comparison",
    "Conjunction",
    "ContextRecord",
    "Decision",
    "GateService",
    "GenConfig",
    "Integrity",
    "MessageRecord",
    "Obligation",
    "OperationRecord",
    "Outcome",
    "PolicyDoc",
    "PolicyRecord",
    "PreferenceRecord",
    "ProvenanceStore",
    "QueryFilter",
    "ServiceConfig",
    "Standing",
    "StoreSnapshot",
    "Target",
    "ViolationEvent",
    "applicable",
    "build_policy_records",
    "canonical_serialize",
    "decide",
    "detect_violations",
    "eval_expr",
    "generate_policies",
    "generation_report",
    "load",
    "misbehavior_check",
    "parse_expr",
    "parse_policy",
    "parse_record",
    "query",
    "record_access",
    "resolve_actor",
    "seal",
    "serialize_policy",
    "validate_record",
    "verify",
]
