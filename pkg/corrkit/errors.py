from __future__ import annotations
from typing import Optional


class CorrkitError(Exception):
    pass


class ValidationError(CorrkitError, ValueError):
    """A value violates a type invariant at construction."""


class ArgumentError(CorrkitError, ValueError):
    """An operation argument violates its precondition."""


class FormatError(CorrkitError, ValueError):
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class ParseError(FormatError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EstimationError(CorrkitError, RuntimeError):
    pass


class EvaluationError(CorrkitError, RuntimeError):
    pass


class UsageError(CorrkitError):
    pass
