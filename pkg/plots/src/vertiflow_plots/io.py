"""Readers for the simulator's export files, with schema validation."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

SUMMARY_REQUIRED = ("policy", "att_mean", "awt_mean", "agt_mean", "aat_mean")


def discover_runs(root) -> List[Tuple[str, Path]]:
    """Export directories under root, named by policy; sorted by name.

    A directory is a run when it holds a summary.csv. Root itself may be a
    single run, otherwise its immediate subdirectories are scanned.
    """
    root = Path(root)
    if (root / "summary.csv").exists():
        return [(load_summary(root / "summary.csv")["policy"], root)]
    runs = []
    if root.is_dir():
        for child in sorted(root.iterdir()):
            if (child / "summary.csv").exists():
                runs.append((load_summary(child / "summary.csv")["policy"], child))
    if not runs:
        raise ValueError(f"no export directories found under {root}")
    return sorted(runs)


def _read_csv(path) -> Tuple[List[str], List[List[str]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path} is empty")
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def load_summary(path) -> Dict[str, object]:
    """First data row of a summary.csv as {column: parsed value}."""
    header, rows = _read_csv(path)
    for col in SUMMARY_REQUIRED:
        if col not in header:
            raise ValueError(f"{path} is missing required column {col}")
    if not rows:
        raise ValueError(f"{path} has no data rows")
    out: Dict[str, object] = {}
    for col, cell in zip(header, rows[0]):
        try:
            out[col] = float(cell)
        except ValueError:
            out[col] = cell
    return out


def load_cdf(path) -> Tuple[np.ndarray, np.ndarray]:
    """cdf.csv as (totals, fractions); totals must be sorted, fractions end at 1."""
    header, rows = _read_csv(path)
    if header[:2] != ["total_min", "fraction"]:
        raise ValueError(f"{path} must start with total_min,fraction columns")
    totals = np.array([float(r[0]) for r in rows])
    fractions = np.array([float(r[1]) for r in rows])
    if totals.size == 0:
        raise ValueError(f"{path} has no data rows")
    if np.any(np.diff(totals) < 0):
        raise ValueError(f"{path} totals are not sorted non-decreasing")
    if fractions[-1] != 1.0:
        raise ValueError(f"{path} fractions must end at 1.0")
    return totals, fractions


def load_trace(path) -> List[dict]:
    """trace.jsonl as a list of records; bad lines are reported by number."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path} line {i}: not valid json ({exc.msg})")
    return records
