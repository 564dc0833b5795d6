"""CSV serialization of trajectories, reports and kernel tables.

Floats are written with ``repr`` (shortest round-trip decimal), rows end in
``\\n`` and nothing depends on wall-clock time, so identical inputs give
byte-identical files.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .integrator import Trajectory


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def order_label(p: float) -> str:
    """Column name of a moment: ``M2`` for order 2.0, ``M1.5`` for 1.5."""
    p = float(p)
    return f"M{int(p)}" if p.is_integer() else f"M{p!r}"


def moment_columns(orders: Sequence[float]) -> list[float]:
    """``0, 1, 2`` followed by any extra orders in the given order."""
    cols = [0.0, 1.0, 2.0]
    for p in orders:
        if float(p) not in cols:
            cols.append(float(p))
    return cols


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_text(path, text: str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def moments_csv(traj: Trajectory, orders: Sequence[float] = ()) -> str:
    """Header ``t,M0,M1,M2[,M_p...],dt`` then one row per recorded state."""
    cols = moment_columns(orders)
    values = np.column_stack([traj.moment(p) for p in cols])
    header = ["t"] + [order_label(p) for p in cols] + ["dt"]
    rows = ([t, *vals, dt] for t, vals, dt in zip(traj.times, values, traj.dts))
    return csv_text(header, rows)


def states_csv(traj: Trajectory) -> str:
    """Header ``t,f_0,...,f_N`` then one row per recorded state."""
    header = ["t"] + [f"f_{j}" for j in range(traj.N + 1)]
    return csv_text(header, ([s.t, *s.f] for s in traj.states))


def write_moments(traj: Trajectory, path, orders: Sequence[float] = ()) -> None:
    write_text(path, moments_csv(traj, orders))


def write_states(traj: Trajectory, path) -> None:
    write_text(path, states_csv(traj))


def read_matrix(path) -> np.ndarray:
    """Square matrix from a CSV file with no header; blank lines are skipped."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if len({len(r) for r in rows}) > 1:
        raise ValueError(f"{path}: kernel table rows have different lengths")
    try:
        mat = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{path}: kernel table must be a square matrix, got {len(rows)} rows")
    return mat


def write_matrix(mat: np.ndarray, path) -> None:
    write_text(path, "\n".join(",".join(_fmt(float(v)) for v in row) for row in mat) + "\n")
