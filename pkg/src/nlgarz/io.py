"""Checkpoint CSVs, JSON reports and gnuplot scripts.

Floats are written with 17 significant digits so every value round-trips
exactly; JSON keys are sorted. Nothing here records wall-clock time, so
identical inputs give byte-identical files.
"""

import json
import math
from pathlib import Path

import numpy as np

STATE_COLUMNS = ("x", "rho", "u", "z", "psi", "xi", "h")
FLOAT_FMT = "%.17g"


def state_filename(t):
    return f"state_t{t:.4}.csv"


def write_state_csv(path, state, xi, h, grid):
    """One row per cell: center ``x``, then ``rho``, ``u``, ``z``, ``psi``, ``xi``, ``h``."""
    cols = np.column_stack([grid.centers, state.rho, state.u, state.z, state.psi, xi, h])
    np.savetxt(path, cols, fmt=FLOAT_FMT, delimiter=",", header=",".join(STATE_COLUMNS), comments="")
    return Path(path)


def read_state_csv(path):
    """Return ``{column: array}`` for a checkpoint CSV."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i].copy() for i, name in enumerate(header)}


def write_table_csv(path, rows, columns=None):
    """Flat CSV of a list of dicts; numbers at full precision."""
    rows = list(rows)
    columns = list(columns or (rows[0].keys() if rows else ()))
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(_cell(r.get(c)) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    return str(v)


def to_jsonable(obj):
    """Plain-Python copy of ``obj``; non-finite floats become the strings ``inf``/``-inf``/``nan``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, obj):
    text = json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n")
    return Path(path)


def write_gnuplot(path, plots):
    """Write a gnuplot script; ``plots`` is a list of ``(title, csv, xcol, ycols, logscale)``.

    Columns are referenced by name, so the script depends only on the CSVs.
    """
    lines = ["# gnuplot script; run with: gnuplot -p " + Path(path).name,
             "set datafile separator ','",
             "set key autotitle columnhead",
             "set grid"]
    for title, csv, xcol, ycols, logscale in plots:
        lines.append("")
        lines.append(f"set title '{title}'")
        lines.append("set logscale xy" if logscale else "unset logscale")
        parts = [f"'{csv}' using '{xcol}':'{y}' with linespoints title '{y}'" for y in ycols]
        lines.append("plot " + ", \\\n     ".join(parts))
        lines.append("pause -1")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)
