"""Exception hierarchy shared across the toolchain."""

from __future__ import annotations

from .source import SourceSpan


class AbmsError(Exception):
    """Base class for all errors raised by this package."""


class EvalError(AbmsError):
    """An expression could not be evaluated (bad reference, bad operand, division by zero)."""

    def __init__(self, message: str, span: SourceSpan | None = None):
        super().__init__(message)
        self.message = message
        self.span = span


class ExprTypeError(AbmsError):
    """An expression failed static type checking."""

    def __init__(self, message: str, span: SourceSpan | None = None):
        super().__init__(message)
        self.message = message
        self.span = span


class EngineError(AbmsError):
    """A simulation run could not be built or completed."""


class FileFormatError(EngineError):
    """An input file (point list, road map) is malformed."""
