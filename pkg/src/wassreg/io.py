"""Reading and writing datasets, test reports, bands and experiment tables.

Quantile-matrix CSV: one row per observation, predictor columns ``x:<name>``
followed by quantile columns ``q:<t>`` whose suffixes define the grid.
Optional ``qd:<t>`` and ``qdd:<t>`` blocks carry quantile densities and their
derivatives on the same grid.

Raw-samples CSV: long format with columns ``id``, ``x:<name>`` ... and
``value``; each id contributes one sample that is turned into a smoothed
quantile curve.
"""

from __future__ import annotations

import csv
import json
from collections import OrderedDict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bands import BandResult
from .errors import DomainError, InputError
from .fit import Dataset
from .inference import TestReport
from .quantile import DEFAULT_GRID_SIZE, TimeGrid
from .simulate import local_linear_smoother, smoothed_quantile_arrays

FLOAT_FMT = "%.17g"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % float(v)
    return str(v)


def _parse_float(s: str, where: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise InputError(f"cannot parse {s!r} as a number ({where})") from None


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InputError(f"{path} is empty")
    return [h.strip() for h in rows[0]], rows[1:]


def detect_format(header: Sequence[str]) -> str:
    if "value" in header and "id" in header:
        return "raw"
    if any(h.startswith("q:") for h in header):
        return "quantile"
    raise InputError("unrecognized CSV layout: expected q:<t> columns or id/value columns")


def load_dataset(path, format: Optional[str] = None, grid_size: int = DEFAULT_GRID_SIZE,
                 fixed_support: bool = False) -> Dataset:
    """Load a dataset from a quantile-matrix or raw-samples CSV file."""
    header, rows = _read_rows(path)
    format = format or detect_format(header)
    if format == "quantile":
        return _load_quantile_matrix(header, rows, fixed_support)
    if format == "raw":
        return _load_raw_samples(header, rows, grid_size, fixed_support)
    raise DomainError(f"unknown dataset format {format!r}")


def _block(header, prefix):
    idx = [j for j, h in enumerate(header) if h.startswith(prefix)]
    return idx, [header[j][len(prefix):] for j in idx]


def _load_quantile_matrix(header, rows, fixed_support) -> Dataset:
    xi, names = _block(header, "x:")
    qi, levels = _block(header, "q:")
    if not xi:
        raise InputError("no predictor columns (x:<name>) found")
    t = np.array([_parse_float(s, "grid header") for s in levels])
    if np.any(np.diff(t) <= 0):
        raise InputError("quantile columns are not in increasing grid order")
    if t[0] != 0.0 or t[-1] != 1.0:
        raise InputError("quantile grid must include the endpoints 0 and 1")
    grid = TimeGrid(t)
    extra = {}
    for prefix in ("qd:", "qdd:"):
        idx, lv = _block(header, prefix)
        if idx:
            if lv != levels:
                raise InputError(f"{prefix} columns must use the quantile grid")
            extra[prefix] = idx
    width = len(header)
    data = np.empty((len(rows), width))
    for r, row in enumerate(rows):
        if len(row) != width:
            raise InputError(f"row {r}: expected {width} fields, got {len(row)}")
        for j in xi + qi + sum(extra.values(), []):
            data[r, j] = _parse_float(row[j], f"row {r}")
    Q = data[:, qi]
    steps = np.diff(Q, axis=1)
    bad = np.flatnonzero(steps.min(axis=1) < -1e-12) if steps.size else []
    if len(bad):
        raise InputError(f"row {int(bad[0])}: quantile values decrease")
    q = data[:, extra["qd:"]] if "qd:" in extra else None
    dq = data[:, extra["qdd:"]] if "qdd:" in extra else None
    return Dataset(data[:, xi], Q, grid, q, dq, fixed_support, tuple(names))


def _load_raw_samples(header, rows, grid_size, fixed_support) -> Dataset:
    xi, names = _block(header, "x:")
    if not xi:
        raise InputError("no predictor columns (x:<name>) found")
    jid, jval = header.index("id"), header.index("value")
    groups: "OrderedDict[str, list]" = OrderedDict()
    preds: dict = {}
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise InputError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        key = row[jid]
        x = tuple(_parse_float(row[j], f"row {r}") for j in xi)
        if key in preds and preds[key] != x:
            raise InputError(f"id {key!r} has inconsistent predictor values")
        preds[key] = x
        groups.setdefault(key, []).append(_parse_float(row[jval], f"row {r}"))
    grid = TimeGrid.uniform(grid_size)
    n = len(groups)
    Q, q, dq = (np.empty((n, grid.size)) for _ in range(3))
    smoothers = {}
    for i, (key, vals) in enumerate(groups.items()):
        sample = np.sort(np.asarray(vals))
        if sample.size < 20:
            raise InputError(f"id {key!r}: need at least 20 draws, got {sample.size}")
        L = smoothers.get(sample.size)
        if L is None:
            L = smoothers[sample.size] = local_linear_smoother(sample.size, grid)
        Q[i], q[i], dq[i] = smoothed_quantile_arrays(sample, grid, L)
    X = np.array([preds[k] for k in groups])
    return Dataset(X, Q, grid, q, dq, fixed_support, tuple(names))


def save_dataset(data: Dataset, path, include_densities: bool = True) -> None:
    """Write ``data`` in quantile-matrix layout with 17 significant digits."""
    levels = [FLOAT_FMT % t for t in data.grid.points]
    header = [f"x:{nm}" for nm in data.names] + [f"q:{s}" for s in levels]
    blocks = [data.X, data.Q]
    if include_densities and data.q is not None:
        header += [f"qd:{s}" for s in levels]
        blocks.append(data.q)
        if data.dq is not None:
            header += [f"qdd:{s}" for s in levels]
            blocks.append(data.dq)
    table = np.hstack(blocks)
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in table:
            w.writerow([FLOAT_FMT % v for v in row])


def _open_out(path):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_table(rows: Sequence[dict], path, columns: Optional[Sequence[str]] = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with _open_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def read_table(path) -> list[dict]:
    header, rows = _read_rows(path)
    return [dict(zip(header, r)) for r in rows]


BAND_COLUMNS = ("abscissa", "lower", "center", "upper", "standardization")


def band_rows(band: BandResult) -> list[dict]:
    order = np.argsort(band.abscissae, kind="stable")
    return [dict(abscissa=band.abscissae[i], lower=band.lower[i], center=band.center[i],
                 upper=band.upper[i], standardization=band.standardization[i]) for i in order]


def table1_rows(rows: Sequence[dict]) -> tuple[list[dict], list[str]]:
    """Pivot coverage rows into the band-by-x layout with one column per transport and n."""
    cells = sorted({(r["transport"], r["n"]) for r in rows},
                   key=lambda c: (c[0] != "linear", c[1]))
    cols = [f"{k}_n{n}" for k, n in cells]
    out: "OrderedDict[tuple, dict]" = OrderedDict()
    for r in rows:
        key = (r["band"], r["x"])
        out.setdefault(key, {"band": r["band"], "x": r["x"]})[f"{r['transport']}_n{r['n']}"] = \
            r["noncoverage"]
    return list(out.values()), ["band", "x"] + cols


FIG2_COLUMNS = ("test", "transport", "n", "engine", "signal", "power")


def emit_report(obj, path, format: Optional[str] = None) -> None:
    """Write a test report (JSON), a band (CSV) or an experiment table (CSV)."""
    if isinstance(obj, TestReport):
        text = json.dumps(obj.to_dict(), indent=2, sort_keys=True)
        with _open_out(path) as fh:
            fh.write(text + "\n")
    elif isinstance(obj, BandResult):
        write_table(band_rows(obj), path, BAND_COLUMNS)
    elif isinstance(obj, (list, tuple)):
        if format == "table1":
            rows, cols = table1_rows(obj)
            write_table(rows, path, cols)
        elif format == "fig2":
            write_table(obj, path, FIG2_COLUMNS)
        else:
            write_table(obj, path)
    else:
        raise TypeError(f"cannot emit object of type {type(obj).__name__}")


def load_report(path) -> TestReport:
    try:
        with open(path) as fh:
            return TestReport.from_dict(json.load(fh))
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise InputError(f"cannot load report from {path}: {exc}") from exc
