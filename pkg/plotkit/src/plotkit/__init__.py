"""Offline convergence figures from trajectory CSV files.

Pure file-to-file transform: reads the ``zgsflow`` trajectory CSV contract
(``#`` comments, header row, numeric rows) and renders semilog metric
curves with deterministic, byte-stable PNG output. Nothing here recomputes
dynamics or metrics, and nothing reads scenario configuration.
"""

from .errors import (
    EmptyCsvError,
    HeaderMismatchError,
    MissingColumnError,
    PlotkitError,
)
from .render import PlotJob, build_figure, render
from .table import Table, read_table

__all__ = [
    "EmptyCsvError",
    "HeaderMismatchError",
    "MissingColumnError",
    "PlotkitError",
    "PlotJob",
    "Table",
    "build_figure",
    "read_table",
    "render",
]
