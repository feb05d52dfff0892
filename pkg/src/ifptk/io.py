"""CSV and JSON input/output."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import Barrier, DensityHistory, cumulative_mass
from .errors import DomainError

__all__ = [
    "read_table",
    "write_rows",
    "write_history",
    "write_summary",
    "write_survival",
    "write_barrier",
    "write_diagnostics",
    "write_estimate",
    "write_matrix",
    "write_json",
]


def _numeric(line: str) -> bool:
    try:
        [float(tok) for tok in line.replace(",", " ").split()]
    except ValueError:
        return False
    return bool(line.strip())


def read_table(path: str | Path, n_cols: int) -> np.ndarray:
    """Numeric CSV with exactly ``n_cols`` columns; one header line and ``#`` comments are skipped."""
    path = Path(path)
    with path.open() as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if lines and not _numeric(lines[0]):
        lines = lines[1:]
    if not lines:
        raise DomainError(f"{path}: no data rows")
    try:
        data = np.loadtxt(lines, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DomainError(f"{path}: {exc}") from None
    if data.shape[1] != n_cols:
        raise DomainError(f"{path}: expected {n_cols} columns, got {data.shape[1]}")
    return data


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence],
               comments: Sequence[str] = ()) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _strided(n: int, stride: int) -> np.ndarray:
    if stride < 1:
        raise DomainError("stride must be >= 1")
    idx = np.arange(0, n, stride)
    return idx if idx[-1] == n - 1 else np.append(idx, n - 1)


def write_history(path: str | Path, h: DensityHistory, stride: int = 1, values: np.ndarray | None = None) -> Path:
    """Matrix CSV: first column ``t``, then one column per node (header ``x`` values)."""
    vals = h.values if values is None else values
    idx = _strided(len(h), stride)
    times = h.mesh.times
    header = ["t"] + [repr(float(x)) for x in h.grid.nodes]
    return write_rows(path, header, ([times[j], *vals[j]] for j in idx))


def write_summary(path: str | Path, h: DensityHistory, stride: int = 1, values: np.ndarray | None = None) -> Path:
    """Per-time ``t, mass, min, max, argmax`` (``argmax`` is the node position)."""
    vals = h.values if values is None else values
    idx = _strided(len(h), stride)
    masses = cumulative_mass(vals, h.grid.dx)[:, -1]
    nodes = h.grid.nodes
    rows = ((h.mesh.times[j], masses[j], vals[j].min(), vals[j].max(), nodes[int(np.argmax(vals[j]))]) for j in idx)
    return write_rows(path, ["t", "mass", "min", "max", "argmax"], rows)


def write_survival(path: str | Path, times: np.ndarray, survival: np.ndarray) -> Path:
    return write_rows(path, ["t", "survival"], zip(times, survival))


def write_barrier(path: str | Path, b: Barrier) -> Path:
    return write_rows(path, ["t", "b"], zip(b.mesh.times, b.values))


def write_diagnostics(path: str | Path, diag) -> Path:
    from .inverse import IterationRecord

    return write_rows(path, IterationRecord.FIELDS, (r.row() for r in diag.records))


def write_estimate(path: str | Path, est, seed: int, extra: Sequence[str] = ()) -> Path:
    """``t, mean, std_err`` with the seed on the first (comment) line."""
    return write_rows(path, ["t", "mean", "std_err"], zip(est.times, est.mean, est.std_err),
                      comments=[f"seed={seed}", *extra])


def write_matrix(path: str | Path, row_label: str, rows: np.ndarray, cols: np.ndarray, values: np.ndarray) -> Path:
    header = [row_label] + [repr(float(c)) for c in cols]
    return write_rows(path, header, ([r, *v] for r, v in zip(rows, values)))


def write_json(path: str | Path, data) -> Path:
    """Strict JSON; non-finite floats are written as the strings ``Infinity``, ``-Infinity``, ``NaN``."""
    path = Path(path)
    path.write_text(json.dumps(_plain(data), indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return "NaN" if math.isnan(obj) else ("Infinity" if obj > 0 else "-Infinity")
    if isinstance(obj, Path):
        return str(obj)
    if obj is None or isinstance(obj, (str, int, float, bool)):
        return obj
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
