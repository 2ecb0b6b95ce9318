"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class RecallGraphError(Exception):
    """Base class for all engine errors."""


class GraphValidationError(RecallGraphError):
    """A scene graph violates its structural invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(v.detail for v in self.violations[:5])
        more = "" if len(self.violations) <= 5 else f" (+{len(self.violations) - 5} more)"
        super().__init__(f"invalid scene graph: {lines}{more}")


class CanonicalParseError(RecallGraphError):
    """Canonical text input could not be parsed."""

    def __init__(self, message: str, line: int = 1, column: int = 1):
        self.line = line
        self.column = column
        super().__init__(f"parse error at line {line}, column {column}: {message}")


class DiffConsistencyError(RecallGraphError):
    """A diff removal names an element absent from the base graph."""


class StreamFormatError(RecallGraphError):
    """An event stream line is malformed or violates the event schema."""

    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class EmptyRecordingError(RecallGraphError):
    """A recording stream contained no frames."""


class DuplicateEpisodeError(RecallGraphError):
    """An episode with this id is already stored."""


class UnknownEpisodeError(RecallGraphError):
    """No stored episode has this id."""


class EpisodeIntegrityError(RecallGraphError):
    """A stored episode file is missing or corrupt."""


class UnplannableEpisodeError(RecallGraphError):
    """The episode contains no physical interactions to plan from."""


class NoMatchingEpisodeError(RecallGraphError):
    """Retrieval produced no candidate episodes for the query."""


class UnknownSessionError(RecallGraphError):
    """No live session has this id."""


class UnknownTemplateError(RecallGraphError):
    """Requested scenario template does not exist."""

    def __init__(self, name: str, available):
        self.available = sorted(available)
        super().__init__(f"unknown template {name!r}; available: {', '.join(self.available)}")


class OracleScaleError(RecallGraphError):
    """Input exceeds the exhaustive-alignment size bounds."""
