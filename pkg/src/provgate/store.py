"""Append-only provenance store backed by a line-delimited file.

Line *n* of the store file holds the record with sequence number *n*.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional, Union

from .errors import (
    DanglingReferenceError,
    DuplicateRecordError,
    InvalidRecordError,
    NotFoundError,
    ProvGateError,
    StoreLoadError,
)
from .records import (
    ActorRecord,
    ContextRecord,
    OperationRecord,
    ProvenanceRecord,
    canonical_serialize,
    parse_record,
    validate_record,
)


@dataclass(frozen=True)
class StoreSnapshot:
    records: tuple[ProvenanceRecord, ...] = ()

    @property
    def high_water_mark(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class QueryFilter:
    """Conjunctive filter; ``None`` fields match everything.

    ``actor_id`` matches records carrying an actorId (operations, messages),
    ``context_id`` and ``resource_id`` match operations, and ``time_range`` is
    inclusive and skips records without a timestamp.
    """

    actor_id: Optional[str] = None
    context_id: Optional[str] = None
    resource_id: Optional[str] = None
    time_range: Optional[tuple[datetime, datetime]] = None
    kind: Optional[str] = None

    def matches(self, record: ProvenanceRecord) -> bool:
        if self.kind is not None and record.KIND != self.kind:
            return False
        if self.actor_id is not None and getattr(record, "actor_id", None) != self.actor_id:
            return False
        if self.context_id is not None and getattr(record, "context_id", None) != self.context_id:
            return False
        if self.resource_id is not None and getattr(record, "resource_id", None) != self.resource_id:
            return False
        if self.time_range is not None:
            stamp = getattr(record, "timestamp", None)
            if stamp is None or not (self.time_range[0] <= stamp <= self.time_range[1]):
                return False
        return True


def query(filter: QueryFilter, snapshot: StoreSnapshot) -> list[ProvenanceRecord]:
    return [r for r in snapshot.records if filter.matches(r)]


def resolve_actor(actor_id: str, snapshot: StoreSnapshot) -> ActorRecord:
    for record in snapshot.records:
        if isinstance(record, ActorRecord) and record.id == actor_id:
            return record
    raise NotFoundError(f"unknown actor {actor_id!r}")


def resolve_context(context_id: str, snapshot: StoreSnapshot) -> ContextRecord:
    for record in snapshot.records:
        if isinstance(record, ContextRecord) and record.id == context_id:
            return record
    raise NotFoundError(f"unknown context {context_id!r}")


class _Index:
    """(kind, id) membership used to enforce uniqueness and references."""

    def __init__(self) -> None:
        self.keys: set[tuple[str, str]] = set()

    def check(self, record: ProvenanceRecord) -> None:
        problems = validate_record(record)
        if problems:
            raise InvalidRecordError(problems)
        if (record.KIND, record.id) in self.keys:
            raise DuplicateRecordError(f"duplicate {record.KIND} id {record.id!r}")
        if isinstance(record, OperationRecord):
            if ("actor", record.actor_id) not in self.keys:
                raise DanglingReferenceError(
                    f"operation {record.id!r} cites unknown actor {record.actor_id!r}"
                )
            if ("context", record.context_id) not in self.keys:
                raise DanglingReferenceError(
                    f"operation {record.id!r} cites unknown context {record.context_id!r}"
                )

    def add(self, record: ProvenanceRecord) -> None:
        self.keys.add((record.KIND, record.id))


def _read_lines(path: Path) -> Iterable[tuple[int, str]]:
    data = path.read_bytes()
    if not data:
        return
    lines = data.split(b"\n")
    if lines[-1] == b"":
        lines.pop()
    for number, raw in enumerate(lines, start=1):
        try:
            yield number, raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise StoreLoadError(number, f"invalid UTF-8 at byte {exc.start}") from None


def load(path: Union[str, os.PathLike]) -> StoreSnapshot:
    """Read a store file; a missing file is an empty store."""
    path = Path(path)
    if not path.exists():
        return StoreSnapshot()
    index = _Index()
    records: list[ProvenanceRecord] = []
    for number, line in _read_lines(path):
        try:
            record = parse_record(line)
            index.check(record)
        except ProvGateError as exc:
            raise StoreLoadError(number, str(exc)) from None
        index.add(record)
        records.append(record)
    return StoreSnapshot(tuple(records))


class ProvenanceStore:
    """Single-writer, multi-reader provenance store.

    With a ``path`` every append is written and fsynced before ``append``
    returns; without one the store lives in memory only.
    """

    def __init__(self, path: Union[str, os.PathLike, None] = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._index = _Index()
        self._records: list[ProvenanceRecord] = []
        if self.path is not None:
            for record in load(self.path).records:
                self._index.add(record)
                self._records.append(record)

    def append(self, record: ProvenanceRecord) -> int:
        with self._lock:
            self._index.check(record)
            if self.path is not None:
                line = canonical_serialize(record) + "\n"
                with open(self.path, "ab") as fh:
                    fh.write(line.encode("utf-8"))
                    fh.flush()
                    os.fsync(fh.fileno())
            self._index.add(record)
            self._records.append(record)
            return len(self._records)

    def snapshot(self) -> StoreSnapshot:
        with self._lock:
            return StoreSnapshot(tuple(self._records))

    @property
    def high_water_mark(self) -> int:
        return len(self._records)

    def query(self, filter: QueryFilter) -> list[ProvenanceRecord]:
        return query(filter, self.snapshot())

    def resolve_actor(self, actor_id: str) -> ActorRecord:
        return resolve_actor(actor_id, self.snapshot())
