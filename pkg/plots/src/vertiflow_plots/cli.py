"""Standalone figure scripts. Each takes --in (export root) and --out (png)."""

from __future__ import annotations

import argparse
import sys
from typing import Callable, Optional, Sequence

from .figures import cdf_figure, decomposition_figure, queues_figure
from .io import discover_runs, load_cdf, load_summary, load_trace


def _parse(argv: Optional[Sequence[str]], description: str) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--in", dest="root", required=True,
                        help="export directory, or a directory of them")
    parser.add_argument("--out", required=True, help="output png path")
    return parser.parse_args(argv)


def _script(argv, description: str, build: Callable) -> int:
    args = _parse(argv, description)
    try:
        runs = discover_runs(args.root)
        build(runs, args.out)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


def main_decomposition(argv: Optional[Sequence[str]] = None) -> int:
    def build(runs, out):
        rows = [load_summary(run / "summary.csv") for _, run in runs]
        decomposition_figure(rows, out)

    return _script(argv, "stacked travel time decomposition per policy", build)


def main_cdf(argv: Optional[Sequence[str]] = None) -> int:
    def build(runs, out):
        curves = {name: load_cdf(run / "cdf.csv") for name, run in runs}
        cdf_figure(curves, out)

    return _script(argv, "cumulative distribution of total travel times", build)


def main_queues(argv: Optional[Sequence[str]] = None) -> int:
    def build(runs, out):
        traces = {name: load_trace(run / "trace.jsonl") for name, run in runs}
        queues_figure(traces, out)

    return _script(argv, "queue lengths per vertiport over the episode", build)
