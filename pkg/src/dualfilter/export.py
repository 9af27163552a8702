"""Deterministic CSV output.

Every file starts with one comment row carrying provenance (seed, grid,
package version) followed by a header row. Floats are written with
``repr`` so identical inputs give byte-identical files. Finite states are
numbered from 1 in files and from 0 in memory.
"""

from __future__ import annotations

import csv
from importlib import metadata
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ctmc import JumpPath
from .grid import TimeGrid

__all__ = [
    "package_version",
    "provenance",
    "write_csv",
    "write_jump_path",
    "write_observation",
    "write_filter_path",
    "write_gains",
    "write_covariance",
    "write_rows",
]


def package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def provenance(seed: int, grid: TimeGrid, **extra) -> dict:
    out = {"seed": int(seed), "T": grid.horizon, "dt": grid.dt, "n_steps": grid.n_steps}
    out.update(extra)
    out["version"] = package_version()
    return out


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], prov: dict) -> Path:
    """Write ``rows`` under a provenance comment and a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("# " + ", ".join(f"{k}={_fmt(v)}" for k, v in prov.items()) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def write_rows(path, rows: Sequence[dict], prov: dict) -> Path:
    """Write a list of dicts sharing the keys of the first row."""
    header = list(rows[0]) if rows else []
    return write_csv(path, header, ([r[h] for h in header] for r in rows), prov)


def write_jump_path(path, paths: Sequence[JumpPath], prov: dict) -> Path:
    """Long format: one row per (trial, segment) with the 1-based state entered.

    Segment 0 starts at time 0 with the initial state.
    """
    def rows():
        for trial, jp in enumerate(paths):
            starts = np.concatenate([[0.0], jp.jump_times])
            for j, (t, s) in enumerate(zip(starts, jp.states)):
                yield trial, j, t, int(s) + 1

    return write_csv(path, ["trial", "jump_index", "time", "state"], rows(), prov)


def _indexed(prefix: str, n: int) -> list[str]:
    return [f"{prefix}_{i + 1}" for i in range(n)]


def write_observation(path, grid: TimeGrid, Z, W, prov: dict, X=None, x_label: str = "X") -> Path:
    """Gridded observation paths ``(N, n+1, m)``, optionally with the signal."""
    Z, W = np.atleast_3d(Z), np.atleast_3d(W)
    m = Z.shape[-1]
    header = ["trial", "time"] + _indexed("Z", m) + _indexed("W", m)
    if X is not None:
        header += _indexed(x_label, X.shape[-1])

    def rows():
        for trial in range(Z.shape[0]):
            for k, t in enumerate(grid.times):
                row = [trial, t, *Z[trial, k], *W[trial, k]]
                if X is not None:
                    row += list(X[trial, k])
                yield row

    return write_csv(path, header, rows(), prov)


def write_filter_path(path, grid: TimeGrid, values, prov: dict, oracle=None, label: str = "pi") -> Path:
    """Filter paths ``(N, n+1, d)`` with optional oracle columns and l1 gap."""
    values = np.asarray(values)
    d = values.shape[-1]
    header = ["trial", "time"] + _indexed(label, d)
    if oracle is not None:
        header += _indexed("oracle", d) + ["oracle_gap"]

    def rows():
        for trial in range(values.shape[0]):
            for k, t in enumerate(grid.times):
                row = [trial, t, *values[trial, k]]
                if oracle is not None:
                    row += [*oracle[trial, k], float(np.abs(values[trial, k] - oracle[trial, k]).sum())]
                yield row

    return write_csv(path, header, rows(), prov)


def write_gains(path, grid: TimeGrid, gains, prov: dict) -> Path:
    """Gain schedules ``(N, n+1, d, m)``, flattened row-major as ``K_i_j``."""
    gains = np.asarray(gains)
    d, m = gains.shape[-2:]
    header = ["trial", "time"] + [f"K_{i + 1}_{j + 1}" for i in range(d) for j in range(m)]

    def rows():
        for trial in range(gains.shape[0]):
            for k, t in enumerate(grid.times):
                yield [trial, t, *gains[trial, k].ravel()]

    return write_csv(path, header, rows(), prov)


def write_covariance(path, grid: TimeGrid, columns: dict, prov: dict, extra: dict | None = None) -> Path:
    """Matrix paths ``(n+1, d, d)`` under name prefixes, plus optional scalar columns."""
    extra = extra or {}
    header = ["time"]
    for name, S in columns.items():
        d = S.shape[-1]
        header += [f"{name}_{i + 1}_{j + 1}" for i in range(d) for j in range(d)]
    header += list(extra)

    def rows():
        for k, t in enumerate(grid.times):
            row = [t]
            for S in columns.values():
                row += list(S[k].ravel())
            row += [col[k] for col in extra.values()]
            yield row

    return write_csv(path, header, rows(), prov)
