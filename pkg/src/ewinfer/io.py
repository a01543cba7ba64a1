"""CSV datasets and JSON results."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .linalg import Dataset


class DataError(ValueError):
    """Malformed input file; the message names the offending row/column."""


def load_dataset(path, x_columns=()) -> Dataset:
    """Read ``y``, the named focal columns and the remaining (nuisance) columns.

    Rows are 1-based data rows (the header is row 0).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    seen = set()
    for h in header:
        if h in seen:
            raise DataError(f"{path}: duplicate column header {h!r}")
        seen.add(h)
    if "y" not in header:
        raise DataError(f"{path}: no response column 'y'")
    x_columns = list(x_columns)
    missing = [c for c in x_columns if c not in header]
    if missing:
        raise DataError(f"{path}: focal columns not found: {missing}")
    if "y" in x_columns:
        raise DataError("the response 'y' cannot be a focal column")
    body = rows[1:]
    if body and body[-1] == []:
        body = body[:-1]
    if len(body) < 2:
        raise DataError(f"{path}: need at least 2 observations, got {len(body)}")
    data = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} fields, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {i}, column {header[j]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {i}, column {header[j]!r}: missing or non-finite value {cell!r}")
            data[i - 1, j] = v
    col = {h: j for j, h in enumerate(header)}
    z_cols = [h for h in header if h != "y" and h not in x_columns]
    y = data[:, col["y"]]
    x = data[:, [col[c] for c in x_columns]] if x_columns else np.zeros((len(body), 0))
    z = data[:, [col[c] for c in z_cols]]
    return Dataset(y, x, z)


def write_dataset(path, dataset: Dataset, x_names=None, z_names=None) -> None:
    """Write with ``repr`` floats so that loading reproduces the arrays exactly."""
    x_names = list(x_names or [f"x{j + 1}" for j in range(dataset.q)])
    z_names = list(z_names or [f"z{j + 1}" for j in range(dataset.p)])
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["y", *x_names, *z_names])
        for i in range(dataset.n):
            vals = [dataset.y[i], *dataset.x[i], *dataset.z[i]]
            wr.writerow([repr(float(v)) for v in vals])


def to_jsonable(obj):
    """Recursively convert numpy containers and scalars for ``json``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=False)
        fh.write("\n")
