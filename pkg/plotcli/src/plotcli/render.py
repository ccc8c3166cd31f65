"""Figure rendering from simulation CSV tables.

Three kinds are supported:

* ``trajectory``: every value column of every input over time, with
  optional horizontal truth lines.
* ``l1-loglog``: seed-averaged absolute error versus time on log-log
  axes, one curve per value column, each annotated with its fitted slope.
* ``sensor-map``: 2-D sensor paths on the unit torus with start, end, and
  target markers; paths are split where they wrap around the boundary
  instead of being drawn across the domain.

Rendering is read-only over the inputs; no numerical results originate
here.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .csvio import CsvFormatError, Table, read_table, require_columns

KINDS = ("trajectory", "l1-loglog", "sensor-map")

_SENSOR_X = re.compile(r"^o(\d+)x$")


@dataclass
class PlotSpec:
    kind: str
    inputs: list
    out: str
    truth: list = field(default_factory=list)
    columns: list = field(default_factory=list)


def _value_columns(tables, spec) -> list:
    cols = spec.columns or [c for c in tables[0].columns if c != "t"]
    for table, path in zip(tables, spec.inputs):
        require_columns(table, ["t"] + cols, path)
    if not cols:
        raise CsvFormatError(f"{spec.inputs[0]}: no value columns")
    return cols


def split_torus_path(x: np.ndarray, y: np.ndarray, threshold: float = 0.5):
    """Insert NaN breaks where a path jumps across the periodic boundary.

    A step larger than ``threshold`` in either coordinate is a wrap, not a
    genuine move, so the polyline is interrupted there.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    jumps = (np.abs(np.diff(x)) > threshold) | (np.abs(np.diff(y)) > threshold)
    if not np.any(jumps):
        return x, y
    xs, ys = [], []
    start = 0
    for k in np.flatnonzero(jumps):
        xs.extend(x[start:k + 1])
        ys.extend(y[start:k + 1])
        xs.append(np.nan)
        ys.append(np.nan)
        start = k + 1
    xs.extend(x[start:])
    ys.extend(y[start:])
    return np.array(xs), np.array(ys)


def fit_loglog_slope(t: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log10(y) against log10(t).

    Only strictly positive points enter the fit, and the transient first
    tenth of them is discarded.
    """
    mask = (t > 0) & (y > 0)
    if np.count_nonzero(mask) < 2:
        raise CsvFormatError("not enough positive points for a log-log fit")
    lt = np.log10(t[mask])
    ly = np.log10(y[mask])
    lo = len(lt) // 10
    slope, _ = np.polyfit(lt[lo:], ly[lo:], 1)
    return float(slope)


def _render_trajectory(tables, spec, ax) -> dict:
    cols = _value_columns(tables, spec)
    for table, path in zip(tables, spec.inputs):
        t = table.column("t")
        for col in cols:
            label = col if len(tables) == 1 else f"{col} [{path}]"
            ax.plot(t, table.column(col), lw=0.9, label=label)
    for v in spec.truth:
        ax.axhline(v, color="k", ls="--", lw=1.2)
    ax.set_xlabel("t")
    ax.legend(fontsize="small", loc="best")
    return {}


def _render_l1_loglog(tables, spec, ax) -> dict:
    cols = _value_columns(tables, spec)
    if spec.truth and len(spec.truth) != len(cols):
        raise CsvFormatError(
            f"{len(spec.truth)} truth values for {len(cols)} columns")
    t = tables[0].column("t")
    for table, path in zip(tables[1:], spec.inputs[1:]):
        if table.data.shape[0] != len(t) or np.any(table.column("t") != t):
            raise CsvFormatError(f"{path}: time grid differs from "
                                 f"{spec.inputs[0]}")
    slopes = {}
    for j, col in enumerate(cols):
        truth = spec.truth[j] if spec.truth else 0.0
        err = np.mean([np.abs(tb.column(col) - truth) for tb in tables],
                      axis=0)
        slope = fit_loglog_slope(t, err)
        slopes[col] = slope
        mask = (t > 0) & (err > 0)
        ax.loglog(t[mask], err[mask], lw=0.9,
                  label=f"{col}: slope={slope:.3f}")
    ax.set_xlabel("t")
    ax.set_ylabel("L1 error")
    ax.legend(fontsize="small", loc="best")
    return slopes


def _render_sensor_map(tables, spec, ax) -> dict:
    pairs = []
    for col in tables[0].columns:
        m = _SENSOR_X.match(col)
        if m and f"o{m.group(1)}y" in tables[0].columns:
            pairs.append((col, f"o{m.group(1)}y"))
    if not pairs:
        raise CsvFormatError(
            f"{spec.inputs[0]}: no sensor coordinate columns (oNx, oNy)")
    for table, path in zip(tables, spec.inputs):
        require_columns(table, [c for p in pairs for c in p], path)
        for cx, cy in pairs:
            x = np.mod(table.column(cx), 1.0)
            y = np.mod(table.column(cy), 1.0)
            xs, ys = split_torus_path(x, y)
            ax.plot(xs, ys, lw=0.8)
            ax.plot(x[0], y[0], "o", ms=5, mfc="none", color="tab:blue")
            ax.plot(x[-1], y[-1], "s", ms=5, color="tab:red")
    if len(spec.truth) % 2 != 0:
        raise CsvFormatError("sensor-map truth values must be (x, y) pairs")
    targets = np.array(spec.truth, dtype=float).reshape(-1, 2)
    for tx, ty in targets:
        ax.plot(tx % 1.0, ty % 1.0, "*", ms=12, color="k")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.0)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    return {}


_RENDERERS = {"trajectory": _render_trajectory,
              "l1-loglog": _render_l1_loglog,
              "sensor-map": _render_sensor_map}


def render(spec: PlotSpec) -> dict:
    """Render the figure to ``spec.out``; returns fitted slopes if any."""
    if spec.kind not in _RENDERERS:
        raise CsvFormatError(f"unknown figure kind {spec.kind!r} "
                             f"(valid: {list(KINDS)})")
    if not spec.inputs:
        raise CsvFormatError("at least one input CSV is required")
    tables = [read_table(p) for p in spec.inputs]
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    try:
        extras = _RENDERERS[spec.kind](tables, spec, ax)
        fig.tight_layout()
        fig.savefig(spec.out, dpi=150)
    finally:
        plt.close(fig)
    return extras
