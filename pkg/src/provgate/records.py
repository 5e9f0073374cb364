"""The five provenance record kinds and their canonical one-line JSON encoding.

Every record serializes to a single JSON object whose first key is ``"kind"``
followed by the record's fields in declaration order::

    operation   id, actorId, contextId, description, output, resourceId, timestamp
    message     id, actorId, sourceId, destinationId, description, contentCarrier, timestamp
    actor       id, name, role
    context     id, state, parameter
    preference  id, target, condition, effect, obligations, timestamp

No whitespace is emitted, non-ASCII text is written as UTF-8 and the keys of
``parameter`` are sorted.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import ClassVar, Union

from .dsl import EFFECTS, parse_expr
from .errors import InvalidRecordError, PolicyParseError, RecordParseError, UnknownKindError
from .timefmt import format_timestamp, is_canonical, parse_timestamp

HEX_DIGEST_RE = re.compile(r"[0-9a-f]{64}")
PARAMETER_KEY_RE = re.compile(r"[a-z][a-z0-9_]*(?:\.[a-z][a-z0-9_]*)+")
OBLIGATION_TEXT_RE = re.compile(r"([1-9][0-9]*) days")


@dataclass(frozen=True)
class OperationRecord:
    KIND: ClassVar[str] = "operation"

    id: str
    actor_id: str
    context_id: str
    description: str
    output: str
    resource_id: str
    timestamp: datetime


@dataclass(frozen=True)
class MessageRecord:
    KIND: ClassVar[str] = "message"

    id: str
    actor_id: str
    source_id: str
    destination_id: str
    description: str
    content_carrier: str
    timestamp: datetime


@dataclass(frozen=True)
class ActorRecord:
    KIND: ClassVar[str] = "actor"

    id: str
    name: str
    role: str


@dataclass(frozen=True)
class ContextRecord:
    KIND: ClassVar[str] = "context"

    id: str
    state: str
    parameter: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class PreferenceRecord:
    """Owner-authored policy preference.

    ``condition`` is policy expression text; each obligation reads ``"<n> days"``.
    """

    KIND: ClassVar[str] = "preference"

    id: str
    target: str
    condition: str
    effect: str
    obligations: tuple[str, ...]
    timestamp: datetime


ProvenanceRecord = Union[OperationRecord, MessageRecord, ActorRecord, ContextRecord, PreferenceRecord]

RECORD_TYPES: dict[str, type] = {
    cls.KIND: cls
    for cls in (OperationRecord, MessageRecord, ActorRecord, ContextRecord, PreferenceRecord)
}
KINDS = tuple(RECORD_TYPES)

# (json key, attribute, codec)
_LAYOUT: dict[str, tuple[tuple[str, str, str], ...]] = {
    "operation": (
        ("id", "id", "str"),
        ("actorId", "actor_id", "str"),
        ("contextId", "context_id", "str"),
        ("description", "description", "str"),
        ("output", "output", "str"),
        ("resourceId", "resource_id", "str"),
        ("timestamp", "timestamp", "ts"),
    ),
    "message": (
        ("id", "id", "str"),
        ("actorId", "actor_id", "str"),
        ("sourceId", "source_id", "str"),
        ("destinationId", "destination_id", "str"),
        ("description", "description", "str"),
        ("contentCarrier", "content_carrier", "str"),
        ("timestamp", "timestamp", "ts"),
    ),
    "actor": (
        ("id", "id", "str"),
        ("name", "name", "str"),
        ("role", "role", "str"),
    ),
    "context": (
        ("id", "id", "str"),
        ("state", "state", "str"),
        ("parameter", "parameter", "map"),
    ),
    "preference": (
        ("id", "id", "str"),
        ("target", "target", "str"),
        ("condition", "condition", "str"),
        ("effect", "effect", "str"),
        ("obligations", "obligations", "list"),
        ("timestamp", "timestamp", "ts"),
    ),
}


def validate_record(record: ProvenanceRecord) -> list[str]:
    """Return every invariant breach of ``record``; an empty list means valid.

    Cross-record rules (unique ids, resolvable actor/context references) are
    the store's business and are not checked here.
    """
    kind = getattr(record, "KIND", None)
    if kind not in _LAYOUT or type(record) is not RECORD_TYPES[kind]:
        return [f"not a provenance record: {type(record).__name__}"]

    problems: list[str] = []
    for key, attr, codec in _LAYOUT[kind]:
        value = getattr(record, attr)
        if codec == "str":
            if not isinstance(value, str):
                problems.append(f"{key} must be a string")
        elif codec == "ts":
            if not is_canonical(value):
                problems.append(f"{key} must be a UTC datetime with second precision")
        elif codec == "map":
            if not isinstance(value, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in value.items()
            ):
                problems.append(f"{key} must map strings to strings")
        elif codec == "list":
            if not isinstance(value, tuple) or not all(isinstance(v, str) for v in value):
                problems.append(f"{key} must be a tuple of strings")
    if problems:
        return problems

    if not record.id:
        problems.append("empty id")

    if isinstance(record, OperationRecord):
        if not record.actor_id:
            problems.append("empty actorId")
        if not record.context_id:
            problems.append("empty contextId")
        if not record.description:
            problems.append("empty description")
        if not HEX_DIGEST_RE.fullmatch(record.output):
            problems.append("output is not a lowercase hex sha-256 digest")
    elif isinstance(record, MessageRecord):
        if not record.actor_id:
            problems.append("empty actorId")
        if not record.source_id:
            problems.append("empty sourceId")
        if not record.destination_id:
            problems.append("empty destinationId")
        if record.source_id == record.destination_id:
            problems.append("source equals destination")
    elif isinstance(record, ActorRecord):
        if not record.role:
            problems.append("empty role")
    elif isinstance(record, ContextRecord):
        for key in sorted(record.parameter):
            if not PARAMETER_KEY_RE.fullmatch(key):
                problems.append(f"parameter key {key!r} is not a dotted lowercase path")
    elif isinstance(record, PreferenceRecord):
        if not record.target:
            problems.append("empty target")
        if record.effect not in EFFECTS:
            problems.append(f"effect must be Permit or Deny, got {record.effect!r}")
        try:
            parse_expr(record.condition)
        except PolicyParseError as exc:
            problems.append(f"malformed condition: {exc}")
        for text in record.obligations:
            if not OBLIGATION_TEXT_RE.fullmatch(text):
                problems.append(f"malformed obligation {text!r}")
    return problems


def canonical_serialize(record: ProvenanceRecord) -> str:
    problems = validate_record(record)
    if problems:
        raise InvalidRecordError(problems)
    out: dict[str, object] = {"kind": record.KIND}
    for key, attr, codec in _LAYOUT[record.KIND]:
        value = getattr(record, attr)
        if codec == "ts":
            value = format_timestamp(value)
        elif codec == "map":
            value = {k: value[k] for k in sorted(value)}
        elif codec == "list":
            value = list(value)
        out[key] = value
    return json.dumps(out, ensure_ascii=False, separators=(",", ":"))


def _byte_offset(line: str, char_pos: int) -> int:
    return len(line[:char_pos].encode("utf-8"))


def _no_duplicates(pairs: list[tuple[str, object]]) -> dict[str, object]:
    seen: dict[str, object] = {}
    for key, value in pairs:
        if key in seen:
            raise ValueError(f"duplicate key {key!r}")
        seen[key] = value
    return seen


def parse_record(line: str) -> ProvenanceRecord:
    """Decode one canonical line (a trailing newline is tolerated)."""
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    if line.endswith("\n"):
        line = line[:-1]
    if not line.strip():
        raise RecordParseError("empty line", 0)
    try:
        obj = json.loads(line, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise RecordParseError(exc.msg, _byte_offset(line, exc.pos)) from None
    except ValueError as exc:
        raise RecordParseError(str(exc), 0) from None
    if not isinstance(obj, dict):
        raise RecordParseError("record line is not a JSON object", 0)
    if "kind" not in obj:
        raise RecordParseError("missing kind tag", 0)
    kind = obj["kind"]
    if kind not in _LAYOUT:
        raise UnknownKindError(kind, _byte_offset(line, max(line.find('"kind"'), 0)))

    def where(key: str) -> int:
        pos = line.find(f'"{key}":')
        return _byte_offset(line, pos) if pos >= 0 else 0

    layout = _LAYOUT[kind]
    expected = {"kind"} | {key for key, _, _ in layout}
    extra = sorted(set(obj) - expected)
    if extra:
        raise RecordParseError(f"unexpected key {extra[0]!r} for {kind} record", where(extra[0]))
    kwargs: dict[str, object] = {}
    for key, attr, codec in layout:
        if key not in obj:
            raise RecordParseError(f"missing key {key!r} for {kind} record", len(line.encode("utf-8")))
        value = obj[key]
        if codec in ("str", "ts") and not isinstance(value, str):
            raise RecordParseError(f"{key} must be a string", where(key))
        if codec == "ts":
            try:
                value = parse_timestamp(value)
            except ValueError as exc:
                raise RecordParseError(str(exc), where(key)) from None
        elif codec == "map":
            if not isinstance(value, dict) or not all(isinstance(v, str) for v in value.values()):
                raise RecordParseError(f"{key} must be an object of strings", where(key))
            value = dict(value)
        elif codec == "list":
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise RecordParseError(f"{key} must be an array of strings", where(key))
            value = tuple(value)
        kwargs[attr] = value
    return RECORD_TYPES[kind](**kwargs)
