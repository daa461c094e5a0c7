"""Reader for trajectory CSV files.

The expected layout is the ``zgsflow`` trajectory contract: any number of
``#`` comment lines (format tag and run metadata), one comma-separated
header row, then numeric rows. Only the header names and the numbers are
consumed here; metadata lines are ignored so the reader keeps working when
producers add annotations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyCsvError, MissingColumnError, PlotkitError


@dataclass(frozen=True)
class Table:
    """One CSV file as named columns of equal length."""

    path: str
    names: tuple[str, ...]
    data: np.ndarray  # shape (rows, len(names))

    def column(self, name: str) -> np.ndarray:
        if name not in self.names:
            raise MissingColumnError(self.path, name, self.names)
        return self.data[:, self.names.index(name)]

    def __len__(self) -> int:
        return self.data.shape[0]


def read_table(path: str | Path) -> Table:
    """Parse one trajectory CSV into a :class:`Table`.

    Raises :class:`EmptyCsvError` if the file has no header row or no data
    rows, and :class:`PlotkitError` on rows that do not parse as numbers.
    """
    path = str(path)
    header: list[str] | None = None
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = [name.strip() for name in rec]
                continue
            try:
                rows.append([float(v) for v in rec])
            except ValueError as exc:
                raise PlotkitError(f"{path}: line {lineno}: {exc}") from None
            if len(rows[-1]) != len(header):
                raise PlotkitError(
                    f"{path}: line {lineno}: expected {len(header)} fields, "
                    f"got {len(rows[-1])}"
                )
    if header is None:
        raise EmptyCsvError(path, "no header row")
    if not rows:
        raise EmptyCsvError(path, "no data rows")
    return Table(path=path, names=tuple(header), data=np.array(rows))
