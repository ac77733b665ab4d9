"""Exception types shared across the package."""

from __future__ import annotations

__all__ = [
    "DigitradeError",
    "SchemaError",
    "IntegrityError",
    "ComputationError",
    "MissingStageError",
]


class DigitradeError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(DigitradeError):
    """A file failed structural parsing (bad header, bad cell, bad type).

    Messages name the offending file, row number and column so the
    problem can be fixed in the source data directly.
    """


class IntegrityError(DigitradeError):
    """Parsed data violates a cross-record rule (dangling id, bad range)."""


class ComputationError(DigitradeError):
    """A numeric routine cannot produce a well-defined result."""


class MissingStageError(DigitradeError):
    """A pipeline stage needs an intermediate that was never produced."""
