"""Append-only CSV metrics: UTF-8, LF endings, 6 significant digits."""

from __future__ import annotations

import math

COLUMNS = ("step", "episode_return_mean", "eval_return_median", "td_loss",
           "pg_loss", "entropy", "epsilon")


def format_value(value) -> str:
    if isinstance(value, bool):
        raise TypeError("metrics values must be numbers")
    if isinstance(value, int):
        return str(value)
    return "%.6g" % float(value)


class MetricsWriter:
    """One row per call; header written once; caller controls flush cadence."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8", newline="")
        self._fh.write(",".join(COLUMNS) + "\n")
        self._last_step = None

    def write_row(self, step: int, **values) -> None:
        unknown = set(values) - set(COLUMNS)
        if unknown:
            raise ValueError(f"unknown metrics columns: {sorted(unknown)}")
        if self._last_step is not None and step <= self._last_step:
            raise ValueError("metrics steps must be strictly increasing")
        self._last_step = step
        row = [format_value(step)]
        for col in COLUMNS[1:]:
            row.append(format_value(values.get(col, math.nan)))
        self._fh.write(",".join(row) + "\n")

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict[str, float]]:
    """Parse a metrics file back to numeric rows."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0].split(",") != list(COLUMNS):
        raise ValueError("metrics header mismatch")
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(COLUMNS):
            raise ValueError("metrics row width mismatch")
        rows.append({col: float(v) for col, v in zip(COLUMNS, parts)})
    return rows
