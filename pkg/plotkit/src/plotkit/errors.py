"""Error types raised while reading tables and assembling figures."""

from __future__ import annotations


class PlotkitError(Exception):
    """Base class for all plotkit errors."""


class EmptyCsvError(PlotkitError):
    """A CSV file contains no header or no data rows."""

    def __init__(self, path: str, reason: str) -> None:
        self.path = path
        super().__init__(f"{path}: {reason}")


class MissingColumnError(PlotkitError):
    """A requested column is absent from a CSV file."""

    def __init__(self, path: str, column: str, available: tuple[str, ...]) -> None:
        self.path = path
        self.column = column
        head = ", ".join(available[:8])
        tail = ", ..." if len(available) > 8 else ""
        super().__init__(
            f"{path}: no column {column!r} (columns: {head}{tail})"
        )


class HeaderMismatchError(PlotkitError):
    """A CSV file's header disagrees with the first file in the job."""

    def __init__(self, path: str, reference: str, detail: str) -> None:
        self.path = path
        self.reference = reference
        super().__init__(f"{path}: header differs from {reference}: {detail}")
