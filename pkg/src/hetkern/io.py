"""Delimited and JSON artifact writers (deterministic formatting)."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def _fmt(v) -> str:
    if isinstance(v, (str, np.str_)):
        return str(v)
    return repr(float(v))


def write_csv(path, columns: dict) -> Path:
    """Write equal-length columns with a header row; floats use round-trip repr."""
    path = Path(path)
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise ValueError(f"columns have different lengths: {dict(zip(names, map(len, cols)))}")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
    return path


def stack_columns(tables: list[dict]) -> dict:
    """Concatenate column dicts sharing the same keys."""
    keys = list(tables[0])
    return {k: np.concatenate([np.asarray(t[k]) for t in tables]) for k in keys}


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
