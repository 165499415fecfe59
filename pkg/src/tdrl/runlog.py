"""Append-only CSV metrics log with a fixed column schema."""

from __future__ import annotations

import csv
from pathlib import Path


def _fmt(value):
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsLog:
    """Writes the header once per file; every row must carry exactly ``columns``."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.columns = list(columns)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists() and self.path.stat().st_size > 0:
            with open(self.path, newline="") as fh:
                header = next(csv.reader(fh))
            if header != self.columns:
                raise ValueError(f"{self.path} has a different column schema")
        else:
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(self.columns)

    def append(self, row):
        missing = [c for c in self.columns if c not in row]
        extra = [k for k in row if k not in self.columns]
        if missing or extra:
            raise ValueError(f"row columns mismatch (missing {missing}, unexpected {extra})")
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(row[c]) for c in self.columns])


def read_metrics(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
