"""CSV and JSON writers for trajectories, field maps and sweeps.

Floats are written with ``repr`` so files round-trip exactly and identical
results give byte-identical files.  JSON envelopes carry ``schema_version``.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .analysis import DensityHistogram, ExitTimeMap
from .config import SCHEMA_VERSION, SimulationConfig, config_hash, to_dict
from .dynamics import TrajectoryRecord
from .elimination import FieldMap


def _num(v) -> str:
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if math.isnan(v) else v
    return v


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    body = {"schema_version": SCHEMA_VERSION, **payload}
    path.write_text(json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n")
    return path


def _write_rows(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def trajectory_header(record: TrajectoryRecord) -> list[str]:
    n = record.pop_lattice.shape[1]
    cols = ["t", "rx", "ry", "px", "py", "pop_impurity", "norm2"]
    cols += [f"pop_atom_{i + 1}" for i in range(n)]
    if record.lattice_r is not None:
        for i in range(n):
            cols += [f"lx_{i + 1}", f"ly_{i + 1}"]
    return cols


def write_trajectory_csv(record: TrajectoryRecord, path) -> Path:
    """One row per sample; lattice positions are appended for a mobile lattice."""
    rows = []
    for k in range(len(record.t)):
        vals = [record.t[k], *record.r[k], *record.p[k], record.pop_impurity[k],
                record.norm2[k], *record.pop_lattice[k]]
        if record.lattice_r is not None:
            vals += list(record.lattice_r[k].ravel())
        rows.append([_num(v) for v in vals])
    return _write_rows(path, trajectory_header(record), rows)


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    """Columns of a trajectory CSV as float arrays keyed by header name."""
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(x) for x in row] for row in reader]).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def trajectory_summary(record: TrajectoryRecord) -> dict:
    return {
        "termination": record.termination,
        "error": record.error,
        "n_samples": len(record.t),
        "t_end": float(record.t[-1]) if len(record.t) else 0.0,
        "sample_dt": record.sample_dt,
        "final_position_lambda0": record.r[-1] if len(record.t) else None,
        "final_norm2": float(record.norm2[-1]) if len(record.t) else None,
    }


def write_trajectory_json(record: TrajectoryRecord, cfg: SimulationConfig, path,
                          csv_name: str = "trajectory.csv", role: str = "trajectory") -> Path:
    return write_json(path, {
        "kind": role,
        "config": to_dict(cfg),
        "config_hash": config_hash(cfg),
        "data_file": csv_name,
        "columns": trajectory_header(record),
        **trajectory_summary(record),
    })


def write_fieldmap_csv(fm: FieldMap, path) -> Path:
    rows = []
    for i, x in enumerate(fm.x):
        for j, y in enumerate(fm.y):
            s = fm.self_energy[i, j]
            rows.append([_num(x), _num(y), _num(s.real), _num(s.imag),
                         _num(fm.force[i, j, 0]), _num(fm.force[i, j, 1]),
                         str(int(fm.mask[i, j]))])
    return _write_rows(path, ["x", "y", "ReS", "ImS", "Fx", "Fy", "mask"], rows)


def write_fieldmap_json(fm: FieldMap, cfg: SimulationConfig, path, dipole, label: str,
                        csv_name: str = "fieldmap.csv") -> Path:
    return write_json(path, {
        "kind": "fieldmap",
        "config_hash": config_hash(cfg),
        "polarization": label,
        "dipole": [[complex(c).real, complex(c).imag] for c in np.asarray(dipole)],
        "omega_gamma0": fm.omega,
        "x_axis": fm.x,
        "y_axis": fm.y,
        "masked_points": int(fm.mask.sum()),
        "data_file": csv_name,
        **fm.meta,
    })


def write_grid_csv(values: np.ndarray, path) -> Path:
    """``(ix, iy, value)`` rows of a 2-D array indexed ``[ix, iy]``."""
    nx, ny = values.shape
    rows = [[str(i), str(j), _num(values[i, j])] for i in range(nx) for j in range(ny)]
    return _write_rows(path, ["ix", "iy", "value"], rows)


def write_density(hist: DensityHistogram, cfg: SimulationConfig, out_dir, grid: int) -> list[Path]:
    out_dir = Path(out_dir)
    csv_path = write_grid_csv(hist.counts, out_dir / "density.csv")
    json_path = write_json(out_dir / "density.json", {
        "kind": "density",
        "config_hash": config_hash(cfg),
        "criterion": "sampled impurity positions",
        "start_grid": [grid, grid],
        "x_edges": hist.x_edges,
        "y_edges": hist.y_edges,
        "total_samples": hist.total_samples,
        "sample_dt": hist.sample_dt,
        "n_trajectories": hist.n_trajectories,
        "failures": hist.failures,
        "terminations": hist.terminations,
        "data_file": csv_path.name,
    })
    return [csv_path, json_path]


def write_exit_map(m: ExitTimeMap, cfg: SimulationConfig, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    csv_path = write_grid_csv(m.exit_time, out_dir / "exit_times.csv")
    json_path = write_json(out_dir / "exit_times.json", {
        "kind": "exit-times",
        "config_hash": config_hash(cfg),
        "criterion": m.criterion,
        "t_final": m.t_final,
        "x_axis": m.x,
        "y_axis": m.y,
        "tags": m.tags.tolist(),
        "population_time": m.population_time,
        "geometric_time": m.geometric_time,
        "failures": m.failures,
        "terminations": m.terminations,
        "data_file": csv_path.name,
    })
    return [csv_path, json_path]
