"""CSV readers for the exported run artifacts.

These scripts are pure consumers: they parse the frozen CSV schemas and draw,
never recomputing any quantity.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from pathlib import Path


class SchemaError(Exception):
    pass


class MissingColumn(SchemaError):
    pass


def read_table(path) -> tuple[list[str], list[dict]]:
    """Header plus rows as dicts of floats; blank cells become None."""
    path = Path(path)
    if not path.exists() or path.stat().st_size == 0:
        raise SchemaError(f"{path}: empty or missing file")
    with open(path) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = []
        for raw in reader:
            if not raw or all(not cell for cell in raw):
                continue
            if len(raw) != len(header):
                raise SchemaError(f"{path}: ragged row with {len(raw)} cells")
            row = {}
            for key, cell in zip(header, raw):
                row[key] = float(cell) if cell != "" else None
            rows.append(row)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return header, rows


def series(rows: list[dict], column: str, path="") -> tuple[list[float], list[float], int]:
    """(iterations, values, n_skipped) for one metric column, NaN/blank rows
    dropped."""
    if rows and column not in rows[0]:
        raise MissingColumn(f"{path}: column {column!r} not in trace")
    xs, ys = [], []
    skipped = 0
    for row in rows:
        val = row.get(column)
        if val is None or math.isnan(val):
            skipped += 1
            continue
        xs.append(row["iter"])
        ys.append(val)
    return xs, ys, skipped


def trace_label(trace_path) -> str:
    """Label from the sibling manifest when present, else the directory name."""
    path = Path(trace_path)
    manifest = path.parent / "manifest.json"
    if manifest.exists():
        try:
            doc = json.loads(manifest.read_text())
            cfg = doc.get("config", {})
            method = cfg.get("optimizer", {}).get("method", "")
            model = cfg.get("model", {}).get("name", "")
            label = " ".join(p for p in (method, model) if p)
            if label:
                return label
        except (json.JSONDecodeError, AttributeError):
            pass
    return path.parent.name or path.stem


def fail(message: str) -> "sys.NoReturn":
    print(f"error: {message}", file=sys.stderr)
    sys.exit(2)
