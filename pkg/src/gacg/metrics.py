"""Metrics persistence: CSV with stable schema and reproducible bytes.

Floats are written with repr(float(...)) — the shortest round-trip form —
so identically seeded runs emit byte-identical files.  Wallclock readings
are inherently nondeterministic, so they live in a `timing.csv` sidecar
next to the metrics file instead of inside it.
"""
from __future__ import annotations

import csv
import os

import numpy as np

from .errors import IntegrityError

METRICS_COLUMNS = ("step", "episode", "mean_return", "capture_rate",
                   "epsilon", "loss_total", "loss_td", "group_raw",
                   "group_reg")
TIMING_COLUMNS = ("step", "wallclock_s")


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        raise IntegrityError("boolean metrics are not part of the schema")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


class CsvAppender:
    """Append rows to a CSV, writing the header only when the file is new."""

    def __init__(self, path: str, columns: tuple):
        self.path = path
        self.columns = columns

    def append(self, row: dict) -> None:
        missing = set(self.columns) - set(row)
        if missing:
            raise IntegrityError(f"metrics row missing columns {sorted(missing)}")
        new_file = not os.path.exists(self.path) or os.path.getsize(self.path) == 0
        with open(self.path, "a", encoding="utf-8", newline="") as fh:
            if new_file:
                fh.write(",".join(self.columns) + "\n")
            fh.write(",".join(format_value(row[c]) for c in self.columns) + "\n")


def read_metrics(path: str, required: tuple = METRICS_COLUMNS) -> dict:
    """Load a metrics CSV into {column: float array}; checks the schema."""
    if not os.path.exists(path):
        raise IntegrityError(f"no metrics file at {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IntegrityError(f"metrics file {path} is empty") from None
        for col in required:
            if col not in header:
                raise IntegrityError(f"metrics file {path} lacks column '{col}'")
        rows = [row for row in reader if row]
    if not rows:
        raise IntegrityError(f"metrics file {path} has no data rows")
    data = np.array([[float(v) for v in row] for row in rows])
    return {col: data[:, i] for i, col in enumerate(header)}
