"""Command-line entry point.

Positional arguments are CSV paths, each optionally suffixed ``=LABEL``
to set the legend label. Without a suffix the label defaults to the file
stem, or to the parent directory name for files named ``trajectory.csv``
so batch layouts like ``runs/case1/FTP/trajectory.csv`` label themselves.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import PlotkitError
from .render import PlotJob, render


def parse_sources(args: list[str]) -> tuple[tuple[str, str], ...]:
    sources: list[tuple[str, str]] = []
    for arg in args:
        if "=" in arg:
            path, label = arg.rsplit("=", 1)
        else:
            path = arg
            p = Path(arg)
            label = p.parent.name if p.stem == "trajectory" and p.parent.name else p.stem
        sources.append((path, label))
    return tuple(sources)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="plotkit",
        description="Plot metric columns from trajectory CSV files.",
    )
    ap.add_argument("csv", nargs="+", help="CSV path, or PATH=LABEL")
    ap.add_argument(
        "--metric", action="append", metavar="NAME",
        help="metric column to plot; repeat for one figure per metric "
             "(default: E_x)",
    )
    ap.add_argument("--out", required=True, help="output image path")
    scale = ap.add_mutually_exclusive_group()
    scale.add_argument(
        "--logy", dest="logy", action="store_true", default=None,
        help="logarithmic y axis (default)",
    )
    scale.add_argument(
        "--linear", dest="logy", action="store_false", help="linear y axis",
    )
    ap.add_argument(
        "--vline", action="append", type=float, metavar="T", default=None,
        help="vertical marker at time T; repeatable",
    )
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    job = PlotJob(
        sources=parse_sources(args.csv),
        metrics=tuple(args.metric) if args.metric else ("E_x",),
        out=args.out,
        logy=True if args.logy is None else args.logy,
        vlines=tuple(args.vline) if args.vline else (),
    )
    try:
        for path in render(job):
            print(f"wrote {path}")
    except (PlotkitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
