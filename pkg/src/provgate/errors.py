from __future__ import annotations


class ProvGateError(Exception):
    """Base class for every error raised by this package."""


class InvalidRecordError(ProvGateError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid record: " + "; ".join(self.violations))


class RecordParseError(ProvGateError):
    """A canonical record line could not be decoded."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte {offset})")


class UnknownKindError(RecordParseError):
    def __init__(self, kind: object, offset: int = 0):
        self.kind = kind
        super().__init__(f"unknown record kind {kind!r}", offset)


class StoreError(ProvGateError):
    pass


class DuplicateRecordError(StoreError):
    pass


class DanglingReferenceError(StoreError):
    pass


class NotFoundError(ProvGateError):
    pass


class StoreLoadError(StoreError):
    def __init__(self, line_number: int, cause: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {cause}")


class PolicyParseError(ProvGateError):
    """Base class for policy document syntax errors; carries a 1-based location."""

    def __init__(self, message: str, line: int, column: int):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")


class UnknownTagError(PolicyParseError):
    pass


class UnbalancedTagError(PolicyParseError):
    pass


class ExpressionError(PolicyParseError):
    pass


class DayCountError(PolicyParseError):
    pass


class UnknownEffectError(PolicyParseError):
    pass


class InvalidPolicyError(ProvGateError):
    """A PolicyDoc cannot be written in canonical form."""


class ServiceError(ProvGateError):
    pass


class ResourceExistsError(ServiceError):
    pass
