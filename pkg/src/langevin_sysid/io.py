"""CSV and JSON artifacts.  Floats are written with 17 significant digits."""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .exceptions import DataError
from .systems import Field, SpaceGrid, TimeGrid, Trajectory


def fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, str):
        return value
    v = float(value)
    if math.isnan(v):
        return "nan"
    return "%.17g" % v


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path, expect=None):
    """Return ``(header, float matrix)``; parse errors name the file row."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file", row=1)
    header = [h.strip() for h in rows[0]]
    if expect is not None and header[: len(expect)] != list(expect):
        raise DataError(f"{path}: header {header} does not start with {list(expect)}", row=1)
    out = []
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {n} has {len(row)} fields, expected {len(header)}",
                            row=n)
        try:
            out.append([float(v) for v in row])
        except ValueError:
            raise DataError(f"{path}: row {n} is not numeric: {row}", row=n) from None
    if not out:
        raise DataError(f"{path}: no data rows", row=2)
    return header, np.array(out)


def _to_builtin(obj):
    if isinstance(obj, dict):
        return {str(k): _to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_builtin(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_builtin(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        json.dump(_to_builtin(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg})", row=exc.lineno) from None


# -- trajectories and fields ------------------------------------------------

def write_trajectory(path, traj):
    d = traj.dim
    header = ["t"] + [f"x{i + 1}" for i in range(d)]
    return write_csv(path, header, np.column_stack([traj.times, traj.states]))


def read_trajectory(path):
    header, data = read_csv(path, expect=["t"])
    if data.shape[0] < 2:
        raise DataError(f"{path}: a trajectory needs at least two rows", row=2)
    try:
        grid = TimeGrid(data[:, 0])
    except ValueError as exc:
        bad = int(np.argmax(np.diff(data[:, 0]) <= 0)) + 3
        raise DataError(f"{path}: {exc}", row=bad) from None
    return Trajectory(grid, data[:, 1:])


def write_field(path, field):
    t = field.time.times[: field.values.shape[0]]
    x = field.space.points
    tt, xx = np.meshgrid(t, x, indexing="ij")
    return write_csv(path, ["t", "x", "u"],
                     np.column_stack([tt.ravel(), xx.ravel(), field.values.ravel()]))


def read_field(path, periodic=False):
    """Long-format field; rows must be ordered by time, then position."""
    header, data = read_csv(path, expect=["t", "x", "u"])
    t = np.unique(data[:, 0])
    x = np.unique(data[:, 1])
    if data.shape[0] != t.size * x.size:
        raise DataError(f"{path}: field is not a complete t-by-x grid")
    values = data[:, 2].reshape(t.size, x.size)
    if not (np.array_equal(data[:, 0].reshape(t.size, x.size)[:, 0], t)
            and np.array_equal(data[:, 1].reshape(t.size, x.size)[0], x)):
        raise DataError(f"{path}: rows must be ordered by time, then position")
    if periodic:
        dx = x[1] - x[0]
        space = SpaceGrid(float(x[0]), float(x[-1] + dx), x.size, periodic=True)
    else:
        space = SpaceGrid(float(x[0]), float(x[-1]), x.size)
    return Field(space, TimeGrid(t), values)


# -- model artifacts --------------------------------------------------------

def library_manifest(library):
    return [{"name": b.name, "exponents": list(b.exponents), "variables": list(b.variables)}
            for b in library.descriptors]


def write_theta(path, library):
    return write_csv(path, library.names, library.theta)


def write_samples(path, model):
    """Long-format draws of the active coefficients."""
    rows = []
    if model.samples is not None:
        draws = model.samples.coefficients
        act = list(zip(*np.nonzero(model.mask.active)))
        for p in range(draws.shape[0]):
            for i, j in act:
                rows.append((p, model.names[i], model.state_names[j], draws[p, i, j]))
    return write_csv(path, ["draw_index", "basis_name", "state_dim", "value"], rows)


def model_report(model, system=None, method=None):
    coef = {}
    for i, name in enumerate(model.names):
        coef[name] = {}
        for j, s in enumerate(model.state_names):
            entry = model.summary.get((name, s))
            coef[name][s] = {"mode": entry["mode"] if entry else 0.0,
                             "std": entry["std"] if entry else 0.0,
                             "active": bool(model.mask.active[i, j])}
    return {
        "system": system,
        "method": method or model.provenance["chain"]["method"],
        "basis": list(model.names),
        "states": list(model.state_names),
        "coefficients": coef,
        "metrics": model.metrics,
        "threshold": model.provenance["threshold"],
        "seed": model.provenance["seed"],
        "converged": model.converged,
        "unidentifiable": [model.state_names[j] for j in model.unidentifiable],
        "provenance": model.provenance,
    }


def diagnostics_report(model, energy_trace_path=None):
    diag = dict(model.samples.diagnostics) if model.samples is not None else {}
    return {"acceptance_rate": diag.get("acceptance_rate"),
            "swap_attempts": diag.get("swap_attempts", 0),
            "swap_accepts": diag.get("swap_accepts", 0),
            "step_size": diag.get("step_size"),
            "energy_trace_path": str(energy_trace_path) if energy_trace_path else None,
            "rounds": model.rounds}


def write_energy_trace(path, model):
    trace = model.samples.energy_trace if model.samples is not None else []
    return write_csv(path, ["iteration", "energy"],
                     [(k + 1, e) for k, e in enumerate(trace)])


def write_band(path, band):
    """Band CSV ``t, dim, lower, median, upper`` (PDE bands use dim = x index)."""
    t = band.grid.times[: band.lower.shape[0]]
    rows = []
    for n in range(band.lower.shape[0]):
        for j in range(band.lower.shape[1]):
            rows.append((t[n], j, band.lower[n, j], band.median[n, j], band.upper[n, j]))
    return write_csv(path, ["t", "dim", "lower", "median", "upper"], rows)


def write_sweep(path, points):
    return write_csv(path, ["threshold", "error_bar", "k_active"],
                     [(p.threshold, p.error_bar, p.k_active) for p in points])


def write_history(path, history):
    cols = ["round", "pool_index", "score_variance", "score_distance", "score_total",
            "error_bar_after_round"]
    return write_csv(path, cols, [[h[c] for c in cols] for h in history])
