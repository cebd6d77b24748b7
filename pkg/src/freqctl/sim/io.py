"""Trajectory CSV export and import."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .integrate import TrajectoryRecord


def _fmt(x: float) -> str:
    if np.isnan(x):
        return ""
    return repr(float(x))


def trajectory_columns(record: TrajectoryRecord) -> list[str]:
    n = len(record.node_names)
    cols = ["t"]
    for j in range(n):
        cols += [f"omega_{j}", f"pg_{j}", f"pl_{j}", f"lambda_{j}"]
    cols += [f"flow_{i}_{k}" for i, k in record.edges]
    cols.append("V1")
    return cols


def write_trajectory(record: TrajectoryRecord, path, actual: bool = False) -> None:
    """Write the sampled trajectory as CSV.

    Power columns are deviations unless ``actual`` is set, in which case the
    scheduled initial values are added. ``V1`` is empty when no reference
    equilibrium exists.
    """
    n = len(record.node_names)
    pg0 = record.initial_pg_actual if actual else np.zeros(n)
    pl0 = record.initial_pl_actual if actual else np.zeros(n)
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_columns(record))
        for k in range(len(record)):
            row = [_fmt(record.times[k])]
            for j in range(n):
                row += [_fmt(record.omega[k, j]), _fmt(record.pg[k, j] + pg0[j]),
                        _fmt(record.pl[k, j] + pl0[j]), _fmt(record.lam[k, j])]
            row += [_fmt(f) for f in record.flows[k]]
            row.append(_fmt(record.V1[k]) if record.V1 is not None else "")
            w.writerow(row)


def read_trajectory(path) -> dict[str, np.ndarray]:
    """Read a trajectory CSV into column arrays (empty cells become NaN)."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(c) if c != "" else np.nan for c in r] for r in body]).reshape(
        len(body), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}
