"""Policy documents: AST, recursive-descent parser, canonical writer, evaluator.

The document syntax is a small XML-like language::

    <policy ID="1">
      <issued>2024-03-01T00:00:00Z</issued>
      <target>
        <subject>Actor.ID</subject>
        <record>read,write</record>
        <restriction>Actor.role == "AuthorizedUser"</restriction>
      </target>
      <condition>system.machineid == "192.168.2.35"</condition>
      <effect>Permit</effect>
      <obligation>
        <temporal constraint>10 days</temporal constraint>
      </obligation>
    </policy>

``<issued>`` and ``<obligation>`` are optional. Expressions are conjunctions
(``&&``) of ``path == "literal"`` / ``path != "literal"`` comparisons and are
evaluated in three-valued logic: a comparison on an attribute missing from
the environment is indeterminate (``None``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime
from typing import Mapping, NamedTuple, Optional, Union

from .errors import (
    DayCountError,
    ExpressionError,
    InvalidPolicyError,
    PolicyParseError,
    UnbalancedTagError,
    UnknownEffectError,
    UnknownTagError,
)
from .timefmt import format_timestamp, is_canonical, now_utc, parse_timestamp

PERMIT = "Permit"
DENY = "Deny"
EFFECTS = (PERMIT, DENY)
TEMPORAL_CONSTRAINT = "temporal constraint"
NAMESPACES = frozenset({"Actor", "Operation", "Context", "system"})

# A <record> scope naming the description attribute itself covers every operation.
ALL_OPERATIONS = "Operation.description"

INDETERMINATE = None

# Stands in for a missing <issued> element; captured once per process.
LOAD_TIME = now_utc()

_IDENT = r"[A-Za-z_][A-Za-z0-9_-]*"
_PATH_RE = re.compile(rf"{_IDENT}(?:\.{_IDENT})+")
_SCOPE_ITEM_RE = re.compile(r"[A-Za-z0-9_][A-Za-z0-9_.-]*")
_DAYS_RE = re.compile(r"(\S+)\s+days")
_POLICY_OPEN_RE = re.compile(r'policy\s+ID\s*=\s*"((?:[^"\\]|\\.)*)"\s*', re.DOTALL)
_KNOWN_TAGS = frozenset(
    {
        "policy",
        "issued",
        "target",
        "subject",
        "record",
        "restriction",
        "condition",
        "effect",
        "obligation",
        TEMPORAL_CONSTRAINT,
    }
)


@dataclass(frozen=True)
class Comparison:
    path: str
    op: str  # "==" or "!="
    literal: str


@dataclass(frozen=True)
class Conjunction:
    terms: tuple["Expr", ...]


Expr = Union[Comparison, Conjunction]


@dataclass(frozen=True)
class Target:
    subject: str
    record: frozenset[str]
    restriction: Expr


@dataclass(frozen=True)
class Obligation:
    days: int
    kind: str = TEMPORAL_CONSTRAINT


@dataclass(frozen=True)
class PolicyDoc:
    id: str
    target: Target
    condition: Expr
    effect: str
    obligations: tuple[Obligation, ...]
    issued_at: datetime


def scope_covers(scope: frozenset[str], action: str) -> bool:
    return ALL_OPERATIONS in scope or action in scope


def is_attribute_path(text: str) -> bool:
    return bool(_PATH_RE.fullmatch(text)) and text.split(".", 1)[0] in NAMESPACES


def conjoin(*exprs: Expr) -> Expr:
    terms: list[Expr] = []
    for e in exprs:
        terms.extend(e.terms if isinstance(e, Conjunction) else (e,))
    return terms[0] if len(terms) == 1 else Conjunction(tuple(terms))


# --- evaluation ---------------------------------------------------------------


def eval_expr(expr: Expr, env: Mapping[str, str]) -> Optional[bool]:
    """Evaluate ``expr`` against ``env``; returns True, False or None (indeterminate)."""
    if isinstance(expr, Comparison):
        if expr.path not in env:
            return INDETERMINATE
        equal = env[expr.path] == expr.literal
        return equal if expr.op == "==" else not equal
    result: Optional[bool] = True
    for term in expr.terms:
        value = eval_expr(term, env)
        if value is False:
            return False
        if value is None:
            result = INDETERMINATE
    return result


# --- writer -------------------------------------------------------------------


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _check_expr(expr: Expr) -> None:
    if isinstance(expr, Comparison):
        if not is_attribute_path(expr.path):
            raise InvalidPolicyError(f"bad attribute path {expr.path!r}")
        if expr.op not in ("==", "!="):
            raise InvalidPolicyError(f"bad comparison operator {expr.op!r}")
        if not isinstance(expr.literal, str):
            raise InvalidPolicyError("comparison literal must be a string")
    elif isinstance(expr, Conjunction):
        if len(expr.terms) < 2:
            raise InvalidPolicyError("conjunction needs at least two terms")
        for term in expr.terms:
            _check_expr(term)
    else:
        raise InvalidPolicyError(f"not an expression: {expr!r}")


def expr_to_text(expr: Expr) -> str:
    _check_expr(expr)
    if isinstance(expr, Comparison):
        return f"{expr.path} {expr.op} {_quote(expr.literal)}"
    return " && ".join(expr_to_text(t) for t in expr.terms)


def serialize_policy(doc: PolicyDoc) -> str:
    """Canonical text of ``doc``, newline-terminated and deterministic."""
    if not isinstance(doc.id, str) or not doc.id:
        raise InvalidPolicyError("policy id must be a non-empty string")
    subject = doc.target.subject
    if not subject or any(c.isspace() or c in '<>"' for c in subject):
        raise InvalidPolicyError(f"subject {subject!r} cannot be written")
    if not doc.target.record:
        raise InvalidPolicyError("operation scope is empty")
    for item in doc.target.record:
        if not _SCOPE_ITEM_RE.fullmatch(item):
            raise InvalidPolicyError(f"operation {item!r} cannot be written")
    if doc.effect not in EFFECTS:
        raise InvalidPolicyError(f"unknown effect {doc.effect!r}")
    for ob in doc.obligations:
        if ob.kind != TEMPORAL_CONSTRAINT or not isinstance(ob.days, int) or ob.days < 1:
            raise InvalidPolicyError(f"bad obligation {ob!r}")
    if not is_canonical(doc.issued_at):
        raise InvalidPolicyError("issued_at must be UTC with second precision")

    lines = [
        f"<policy ID={_quote(doc.id)}>",
        f"  <issued>{format_timestamp(doc.issued_at)}</issued>",
        "  <target>",
        f"    <subject>{subject}</subject>",
        f"    <record>{','.join(sorted(doc.target.record))}</record>",
        f"    <restriction>{expr_to_text(doc.target.restriction)}</restriction>",
        "  </target>",
        f"  <condition>{expr_to_text(doc.condition)}</condition>",
        f"  <effect>{doc.effect}</effect>",
    ]
    if doc.obligations:
        lines.append("  <obligation>")
        for ob in doc.obligations:
            lines.append(f"    <temporal constraint>{ob.days} days</temporal constraint>")
        lines.append("  </obligation>")
    lines.append("</policy>")
    return "\n".join(lines) + "\n"


# --- parser -------------------------------------------------------------------


class _Tok(NamedTuple):
    kind: str  # open | close | text | eof
    value: str
    pos: int
    attr: Optional[str] = None


def _location(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    return line, pos - (text.rfind("\n", 0, pos) + 1) + 1


def _unescape(body: str) -> str:
    return re.sub(r"\\(.)", r"\1", body, flags=re.DOTALL)


class _ExprParser:
    def __init__(self, text: str, doc: str, base: int):
        self.text = text
        self.doc = doc
        self.base = base
        self.i = 0

    def fail(self, message: str, at: Optional[int] = None) -> ExpressionError:
        line, col = _location(self.doc, self.base + (self.i if at is None else at))
        return ExpressionError(message, line, col)

    def skip(self) -> None:
        while self.i < len(self.text) and self.text[self.i].isspace():
            self.i += 1

    def at_end(self) -> bool:
        self.skip()
        return self.i >= len(self.text)

    def path(self) -> str:
        self.skip()
        m = _PATH_RE.match(self.text, self.i)
        if not m:
            if self.i < len(self.text) and re.match(_IDENT, self.text[self.i:]):
                raise self.fail("attribute path needs at least one '.'")
            raise self.fail("expected attribute path")
        if m.group().split(".", 1)[0] not in NAMESPACES:
            raise self.fail(f"unknown attribute namespace in {m.group()!r}")
        self.i = m.end()
        return m.group()

    def operator(self) -> str:
        self.skip()
        op = self.text[self.i : self.i + 2]
        if op not in ("==", "!="):
            raise self.fail("expected '==' or '!='")
        self.i += 2
        return op

    def literal(self) -> str:
        self.skip()
        if self.i >= len(self.text) or self.text[self.i] != '"':
            raise self.fail("expected quoted string literal")
        start = self.i
        j = self.i + 1
        while j < len(self.text):
            c = self.text[j]
            if c == "\\":
                if j + 1 >= len(self.text) or self.text[j + 1] not in '\\"':
                    raise self.fail("bad escape in string literal", j)
                j += 2
                continue
            if c == '"':
                self.i = j + 1
                return _unescape(self.text[start + 1 : j])
            j += 1
        raise self.fail("unterminated string literal", start)

    def parse(self) -> Expr:
        if self.at_end():
            raise self.fail("empty expression")
        terms: list[Expr] = []
        while True:
            path = self.path()
            op = self.operator()
            terms.append(Comparison(path, op, self.literal()))
            if self.at_end():
                break
            if self.text.startswith("&&", self.i):
                self.i += 2
                continue
            raise self.fail("expected '&&' or end of expression")
        return terms[0] if len(terms) == 1 else Conjunction(tuple(terms))


def parse_expr(text: str) -> Expr:
    """Parse a bare expression such as ``Actor.role == "Auditor" && Context.id == "c1"``."""
    return _ExprParser(text, text, 0).parse()


def _scan_quoted(text: str, i: int) -> int:
    """Index just past the string literal opening at ``i``; -1 if it never closes."""
    j = i + 1
    while j < len(text):
        if text[j] == "\\":
            j += 2
            continue
        if text[j] == '"':
            return j + 1
        j += 1
    return -1


def _scan_to(text: str, i: int, stop: str) -> int:
    """Next ``stop`` at or after ``i`` that is not inside a string literal."""
    j = i
    while j < len(text) and text[j] != stop:
        if text[j] == '"':
            end = _scan_quoted(text, j)
            if end < 0:
                # unterminated literal: let the element parser report it
                k = text.find(stop, j)
                return len(text) if k < 0 else k
            j = end
        else:
            j += 1
    return j


def _lex(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, n = 0, len(text)
    while i < n:
        if text[i] == "<":
            j = _scan_to(text, i + 1, ">")
            if j >= n:
                line, col = _location(text, i)
                raise UnbalancedTagError("unterminated tag", line, col)
            inner = text[i + 1 : j]
            closing = inner.startswith("/")
            if closing:
                inner = inner[1:]
            attr = None
            m = None if closing else _POLICY_OPEN_RE.fullmatch(inner.strip())
            if m:
                name, attr = "policy", _unescape(m.group(1))
            else:
                name = " ".join(inner.split())
            if name not in _KNOWN_TAGS:
                line, col = _location(text, i)
                raise UnknownTagError(f"unknown tag <{'/' if closing else ''}{name}>", line, col)
            if name == "policy" and not closing and attr is None:
                line, col = _location(text, i)
                raise PolicyParseError('policy tag needs an ID="..." attribute', line, col)
            toks.append(_Tok("close" if closing else "open", name, i, attr))
            i = j + 1
        else:
            j = _scan_to(text, i, "<")
            toks.append(_Tok("text", text[i:j], i))
            i = j
    toks.append(_Tok("eof", "", n))
    return toks


class _DocParser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _lex(text)
        self.k = 0

    def error(self, cls: type, message: str, pos: int) -> PolicyParseError:
        line, col = _location(self.text, pos)
        return cls(message, line, col)

    def skip_blank(self) -> None:
        tok = self.toks[self.k]
        if tok.kind == "text":
            if tok.value.strip():
                offset = len(tok.value) - len(tok.value.lstrip())
                raise self.error(PolicyParseError, "unexpected text", tok.pos + offset)
            self.k += 1

    def peek_open(self, name: str) -> bool:
        self.skip_blank()
        tok = self.toks[self.k]
        return tok.kind == "open" and tok.value == name

    def open(self, name: str) -> _Tok:
        self.skip_blank()
        tok = self.toks[self.k]
        if tok.kind == "open" and tok.value == name:
            self.k += 1
            return tok
        if tok.kind == "eof":
            raise self.error(UnbalancedTagError, f"expected <{name}> before end of document", tok.pos)
        if tok.kind == "close":
            raise self.error(UnbalancedTagError, f"unexpected </{tok.value}>, expected <{name}>", tok.pos)
        raise self.error(PolicyParseError, f"expected <{name}>, found <{tok.value}>", tok.pos)

    def close(self, name: str) -> None:
        self.skip_blank()
        tok = self.toks[self.k]
        if tok.kind == "close" and tok.value == name:
            self.k += 1
            return
        if tok.kind == "eof":
            raise self.error(UnbalancedTagError, f"<{name}> is never closed", tok.pos)
        if tok.kind == "close":
            raise self.error(UnbalancedTagError, f"</{tok.value}> does not match <{name}>", tok.pos)
        raise self.error(UnbalancedTagError, f"expected </{name}>, found <{tok.value}>", tok.pos)

    def leaf(self, name: str) -> tuple[str, int]:
        start = self.open(name)
        tok = self.toks[self.k]
        content, pos = "", start.pos + len(name) + 2
        if tok.kind == "text":
            content, pos = tok.value, tok.pos
            self.k += 1
        self.close(name)
        return content, pos

    def expr(self, name: str) -> Expr:
        content, pos = self.leaf(name)
        return _ExprParser(content, self.text, pos).parse()

    def parse(self, default_issued_at: datetime) -> PolicyDoc:
        head = self.open("policy")
        if not head.attr:
            raise self.error(PolicyParseError, "policy ID must not be empty", head.pos)

        issued_at = default_issued_at
        if self.peek_open("issued"):
            content, pos = self.leaf("issued")
            try:
                issued_at = parse_timestamp(content.strip())
            except ValueError:
                raise self.error(PolicyParseError, "malformed issued timestamp", pos) from None

        self.open("target")
        subject, pos = self.leaf("subject")
        subject = subject.strip()
        if not subject or any(c.isspace() or c == '"' for c in subject):
            raise self.error(PolicyParseError, "malformed subject", pos)
        scope_text, pos = self.leaf("record")
        scope = [item.strip() for item in scope_text.split(",")]
        if not all(_SCOPE_ITEM_RE.fullmatch(item) for item in scope):
            raise self.error(PolicyParseError, "malformed operation scope", pos)
        restriction = self.expr("restriction")
        self.close("target")

        condition = self.expr("condition")

        effect_text, pos = self.leaf("effect")
        effect = effect_text.strip()
        if effect not in EFFECTS:
            raise self.error(UnknownEffectError, f"unknown effect {effect!r}", pos)

        obligations: list[Obligation] = []
        if self.peek_open("obligation"):
            self.open("obligation")
            while True:
                content, pos = self.leaf(TEMPORAL_CONSTRAINT)
                m = _DAYS_RE.fullmatch(content.strip())
                if not m:
                    raise self.error(DayCountError, "expected '<n> days'", pos)
                if not re.fullmatch(r"[0-9]+", m.group(1)):
                    raise self.error(DayCountError, f"day count {m.group(1)!r} is not an integer", pos)
                days = int(m.group(1))
                if days < 1:
                    raise self.error(DayCountError, "day count must be at least 1", pos)
                obligations.append(Obligation(days))
                if not self.peek_open(TEMPORAL_CONSTRAINT):
                    break
            self.close("obligation")

        self.close("policy")
        self.skip_blank()
        tail = self.toks[self.k]
        if tail.kind != "eof":
            raise self.error(PolicyParseError, "content after </policy>", tail.pos)
        return PolicyDoc(
            id=head.attr,
            target=Target(subject, frozenset(scope), restriction),
            condition=condition,
            effect=effect,
            obligations=tuple(obligations),
            issued_at=issued_at,
        )


def parse_policy(text: str, default_issued_at: Optional[datetime] = None) -> PolicyDoc:
    """Parse one policy document.

    A document without ``<issued>`` is stamped with ``default_issued_at``, or
    the process load time when that is None.
    """
    return _DocParser(text).parse(default_issued_at or LOAD_TIME)
