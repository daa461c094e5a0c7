"""Figure assembly and file output.

A :class:`PlotJob` lists labeled CSV sources, the metric columns to plot,
and output options; :func:`render` writes one PNG per metric. Figures are
built through the object-oriented matplotlib API with the Agg raster
backend only, and the PNG metadata is pinned, so rendering the same job on
the same inputs produces byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from matplotlib.figure import Figure

from .errors import HeaderMismatchError, MissingColumnError, PlotkitError
from .table import Table, read_table

_DPI = 100
_FIGSIZE = (6.4, 4.8)


@dataclass(frozen=True)
class PlotJob:
    """One batch of curves to draw from trajectory CSV files."""

    sources: tuple[tuple[str, str], ...]  # (csv path, legend label)
    metrics: tuple[str, ...] = ("E_x",)
    out: str = "figure.png"
    logy: bool = True
    vlines: tuple[float, ...] = field(default_factory=tuple)


def _load_sources(job: PlotJob) -> list[Table]:
    if not job.sources:
        raise PlotkitError("no input files in job")
    tables = [read_table(path) for path, _ in job.sources]
    ref = tables[0]
    for tab in tables:
        for name in ("t", *job.metrics):
            if name in tab.names:
                continue
            if tab is ref or name not in ref.names:
                raise MissingColumnError(tab.path, name, tab.names)
            raise HeaderMismatchError(tab.path, ref.path, f"missing column {name!r}")
    return tables


def build_figure(job: PlotJob, metric: str, tables: list[Table]) -> Figure:
    """Assemble the figure for one metric without touching the filesystem."""
    fig = Figure(figsize=_FIGSIZE)
    ax = fig.add_subplot(111)
    for (_, label), tab in zip(job.sources, tables):
        ax.plot(tab.column("t"), tab.column(metric), label=label, linewidth=1.5)
    for v in job.vlines:
        ax.axvline(v, color="0.4", linestyle="--", linewidth=1.0)
    if job.logy:
        ax.set_yscale("log")
    ax.set_xlabel("t [s]")
    ax.set_ylabel(metric)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    return fig


def _out_path(job: PlotJob, metric: str) -> Path:
    out = Path(job.out)
    if len(job.metrics) == 1:
        return out
    return out.with_name(f"{out.stem}_{metric}{out.suffix or '.png'}")


def render(job: PlotJob) -> tuple[str, ...]:
    """Write one figure per metric in ``job``; returns the written paths."""
    tables = _load_sources(job)
    written: list[str] = []
    for metric in job.metrics:
        fig = build_figure(job, metric, tables)
        path = _out_path(job, metric)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=_DPI, metadata={"Software": "plotkit"})
        written.append(str(path))
    return tuple(written)
