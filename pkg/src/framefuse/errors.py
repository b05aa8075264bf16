"""Exception types shared across the engine."""

from __future__ import annotations


class FrameFuseError(Exception):
    """Base class for all engine errors."""


class PlanParseError(FrameFuseError):
    """Planner output could not be parsed.

    ``column`` is the 1-based character position of the problem when known.
    """

    def __init__(self, message: str, column: int | None = None):
        super().__init__(message if column is None else f"{message} (column {column})")
        self.column = column


class PlanValidationError(FrameFuseError):
    """A parsed plan violates its contract (unknown tool, undeclared id, ...)."""


class ContractError(FrameFuseError):
    """Cross-module contract violation (missing rank vector, length mismatch)."""


class MissingDataError(FrameFuseError):
    """A file backend lacks required data; the message names the expected path."""


class ProviderError(FrameFuseError):
    """An external provider failed after exhausting retries."""


class StageError(FrameFuseError):
    """A pipeline stage failed; carries the stage tag for per-record reporting."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r}: {cause}")
        self.stage = stage
        self.cause = cause


class RunError(FrameFuseError):
    """An evaluation run could not produce a report (e.g. every record failed)."""
