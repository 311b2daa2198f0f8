"""Delimited and JSON artifact writers.

CSV dialect: comma-separated, '.' decimal point, no locale, one header row
of column names.  Floats are written with ``%.17g`` so identical inputs
produce byte-identical bodies; a timestamp comment line is prepended only
when stamping is requested.
"""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "fmt",
    "write_csv",
    "write_json",
    "probe_to_files",
    "sweep_to_csv",
    "trajectory_to_files",
    "calculus_to_json",
    "dump_operator",
    "load_operator",
]


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path, header: Sequence[str], rows, stamp: Optional[str] = None) -> Path:
    path = Path(path)
    lines = []
    if stamp:
        lines.append(f"# generated: {stamp}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)
                    + "\n", encoding="utf-8")
    return path


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, complex):
        return {"re": v.real, "im": v.imag}
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON-serializable: {type(v)}")


def probe_to_files(probe, csv_path, json_path, stamp: Optional[str] = None):
    """Decay probe: CSV of samples plus a JSON header."""
    write_csv(csv_path, ("xi_norm", "lambda_abs", "i", "j", "value"),
              probe.samples, stamp=stamp)
    write_json(json_path, probe.to_header_dict())


def sweep_to_csv(sweep, csv_path, stamp: Optional[str] = None):
    write_csv(csv_path,
              ("lambda_re", "lambda_im", "norm", "weighted_norm_times_bracket"),
              sweep.csv_rows(), stamp=stamp)


def trajectory_to_files(traj, csv_path, json_path, stamp: Optional[str] = None):
    """Trajectory CSV ``(t, mode_index, |u1|, |u2|, |u3|)`` + parameter echo."""
    rows = []
    for ti, t in enumerate(traj.times):
        mags = traj.mode_magnitudes(ti)
        for k in range(traj.grid.npoints):
            rows.append((float(t), k, float(mags[0, k]), float(mags[1, k]),
                         float(mags[2, k])))
    write_csv(csv_path, ("t", "mode_index", "abs_u1", "abs_u2", "abs_u3"),
              rows, stamp=stamp)
    write_json(json_path, {"params": traj.params.to_dict(),
                           "grid": traj.grid.to_dict(),
                           "shift": traj.shift,
                           "steps": len(traj.times) - 1,
                           "T": float(traj.times[-1])})


def calculus_to_json(result, json_path):
    write_json(json_path, result.to_dict())


def dump_operator(op, bin_path, json_path):
    """Flat row-major complex dump with a JSON sidecar."""
    bin_path = Path(bin_path)
    np.ascontiguousarray(op.matrix, dtype=np.complex128).tofile(bin_path)
    write_json(json_path, {
        "q": op.q, "n": op.grid.n, "N": op.grid.N, "L": op.grid.L,
        "s": op.s, "shift": op.shift,
        "l": list(op.l), "m": list(op.m),
        "dtype": "complex128", "order": "row-major",
        "shape": list(op.matrix.shape),
        "weights": op.weights.tolist(),
    })


def load_operator(bin_path, json_path):
    """Inverse of :func:`dump_operator`; returns ``(matrix, sidecar_dict)``."""
    with open(json_path, "r", encoding="utf-8") as fh:
        side = json.load(fh)
    mat = np.fromfile(bin_path, dtype=np.complex128).reshape(side["shape"])
    return mat, side


def now_stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
