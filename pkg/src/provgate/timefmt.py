"""UTC timestamps at second precision, serialized as ``YYYY-MM-DDTHH:MM:SSZ``."""

from __future__ import annotations

import re
from datetime import datetime, timedelta, timezone

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
_TIMESTAMP_RE = re.compile(r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z")


def parse_timestamp(text: str) -> datetime:
    """Parse the canonical form; anything else (offsets, fractions) is rejected."""
    if not isinstance(text, str) or not _TIMESTAMP_RE.fullmatch(text):
        raise ValueError(f"not a canonical UTC timestamp: {text!r}")
    return datetime.strptime(text, TIMESTAMP_FORMAT).replace(tzinfo=timezone.utc)


def format_timestamp(value: datetime) -> str:
    if not is_canonical(value):
        raise ValueError(f"timestamp must be UTC with second precision: {value!r}")
    return value.strftime(TIMESTAMP_FORMAT)


def is_canonical(value: object) -> bool:
    return (
        isinstance(value, datetime)
        and value.utcoffset() == timedelta(0)
        and value.microsecond == 0
        and 1 <= value.year <= 9999
    )


def utc(year: int, month: int, day: int, hour: int = 0, minute: int = 0, second: int = 0) -> datetime:
    return datetime(year, month, day, hour, minute, second, tzinfo=timezone.utc)


def now_utc() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)
