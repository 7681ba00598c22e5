"""Deterministic CSV/JSON emission and ingestion helpers.

Floats are written with ``repr`` (shortest round-trip form), missing values
as empty fields, rows with a bare ``\n`` terminator. Identical inputs always
produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError


def format_cell(value, int_like: bool = False) -> str:
    if value is None:
        return ""
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if math.isnan(v):
            return ""
        if int_like and v.is_integer():
            return str(int(v))
        return repr(v)
    if isinstance(value, (np.integer, int)):
        return str(int(value))
    return str(value)


def write_csv(
    path: str | Path,
    columns: Sequence[str],
    data: Mapping[str, np.ndarray],
    int_like: Iterable[str] = (),
) -> None:
    """Write columnar ``data`` to ``path`` in the order given by ``columns``.

    ``int_like`` names float columns that hold whole numbers (or NaN for
    missing) and should be rendered without a decimal point.
    """
    int_cols = set(int_like)
    missing = [c for c in columns if c not in data]
    if missing:
        raise ConfigurationError(f"write_csv: no data for columns {missing}")
    n = len(next(iter(data.values()))) if columns else 0
    for c in columns:
        if len(data[c]) != n:
            raise ConfigurationError(
                f"write_csv: column {c!r} has {len(data[c])} rows, expected {n}"
            )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        cols = [(data[c], c in int_cols) for c in columns]
        for i in range(n):
            writer.writerow([format_cell(arr[i], il) for arr, il in cols])


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Read a CSV as (header, raw string rows); parsing is the caller's job."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"{path}: empty CSV") from None
        rows = [row for row in reader]
    width = len(header)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ConfigurationError(
                f"{path}: row {i + 2} has {len(row)} fields, expected {width}"
            )
    return header, rows


def column_floats(header: list[str], rows: list[list[str]], name: str) -> np.ndarray:
    """Extract one column as float64, empty fields becoming NaN."""
    if name not in header:
        raise ConfigurationError(f"missing required column {name!r}")
    j = header.index(name)
    out = np.empty(len(rows))
    for i, row in enumerate(rows):
        cell = row[j]
        try:
            out[i] = float(cell) if cell != "" else np.nan
        except ValueError:
            raise ConfigurationError(
                f"column {name!r} row {i + 2}: not a number: {cell!r}"
            ) from None
    return out


def column_ints(header: list[str], rows: list[list[str]], name: str) -> np.ndarray:
    vals = column_floats(header, rows, name)
    if np.any(np.isnan(vals)):
        raise ConfigurationError(f"column {name!r} has missing values")
    if not np.all(vals == np.rint(vals)):
        raise ConfigurationError(f"column {name!r} has non-integer values")
    return vals.astype(np.int64)


def write_json(path: str | Path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def json_safe(value):
    """Recursively convert numpy scalars/arrays and NaN for JSON emission."""
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [json_safe(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return None if math.isnan(v) else v
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value
