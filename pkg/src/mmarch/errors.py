"""Exception types shared across the runtime."""

from __future__ import annotations


class MMArchError(Exception):
    """Base class for all mm-arch errors."""


class ChunkError(MMArchError):
    """Malformed chunk, query, or symbol."""


class OwnershipError(MMArchError):
    """A writer touched a working-memory buffer it does not own."""

    def __init__(self, writer: str, buffer: str):
        self.writer = writer
        self.buffer = buffer
        super().__init__(f"writer {writer!r} does not own buffer {buffer!r}")


class TemporalOrderError(MMArchError):
    """A timestamp moved backwards relative to recorded history."""


class UnknownEntryError(MMArchError):
    """Referenced middle-memory entry id does not exist."""


class BindingError(MMArchError):
    """An action template referenced a binding no condition produced."""


class ModelValidationError(MMArchError):
    """One or more violations found while validating a model definition.

    ``violations`` is a list of (path, message) pairs where path points
    into the model document, e.g. ``shadow_systems[1].productions[0].actions[0]``.
    """

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = violations
        lines = "\n".join(f"  {path}: {msg}" for path, msg in violations)
        super().__init__(f"model validation failed with {len(violations)} violation(s):\n{lines}")


class TraceFormatError(MMArchError):
    """A trace file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class UnsupportedTraceVersion(TraceFormatError):
    """Trace file declares a version this runtime cannot read."""
