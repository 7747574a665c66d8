"""File formats: sample batches, result tables, reports, and run manifests.

Sample batches travel either as CSV (RFC 4180, headered) or as raw
little-endian float64 arrays:

* channel data  -- CSV columns ``x,y`` / binary interleaved pairs
                   [x0, y0, x1, y1, ...]; vacuum shots are a single column
                   ``y0`` / a flat binary array;
* calibration   -- CSV columns ``A,phi,outcome`` / binary interleaved
                   triples.

CSV numbers are written with shortest round-trip repr, so identical inputs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .phase_noise import PhaseCalibrationSamples

__all__ = [
    "write_xy", "read_xy", "write_scalar_series", "read_scalar_series",
    "write_phase_samples", "read_phase_samples",
    "write_budget_csv", "write_curves_csv", "write_json",
    "write_manifest", "read_config",
    "BUDGET_COLUMNS",
]

BUDGET_COLUMNS = ["scheme", "V_A", "A", "N", "K", "L", "Q", "R_rho",
                  "Delta_diag", "Delta_nondiag", "R_sigma", "slack",
                  "epsilon_prep", "entropy_bits"]


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def _infer_binary(path, fmt: str | None) -> bool:
    if fmt is not None:
        return fmt == "binary"
    return Path(path).suffix.lower() in (".bin", ".dat", ".raw")


# ---------------------------------------------------------------------------
# sample batches
# ---------------------------------------------------------------------------

def write_xy(path, x, y, fmt: str | None = None) -> None:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if _infer_binary(path, fmt):
        np.column_stack([x, y]).astype("<f8").ravel().tofile(path)
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        for xi, yi in zip(x, y):
            w.writerow([_fmt(xi), _fmt(yi)])


def read_xy(path, fmt: str | None = None):
    if _infer_binary(path, fmt):
        flat = np.fromfile(path, dtype="<f8")
        if flat.size % 2:
            raise ValueError(f"{path}: odd number of values in an x,y file")
        pairs = flat.reshape(-1, 2)
        return pairs[:, 0].copy(), pairs[:, 1].copy()
    data = np.genfromtxt(path, delimiter=",", names=True)
    return np.atleast_1d(data["x"]).astype(float), np.atleast_1d(data["y"]).astype(float)


def write_scalar_series(path, values, name: str = "y0",
                        fmt: str | None = None) -> None:
    values = np.asarray(values, dtype=np.float64)
    if _infer_binary(path, fmt):
        values.astype("<f8").tofile(path)
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([name])
        for v in values:
            w.writerow([_fmt(v)])


def read_scalar_series(path, fmt: str | None = None) -> np.ndarray:
    if _infer_binary(path, fmt):
        return np.fromfile(path, dtype="<f8")
    raw = np.genfromtxt(path, delimiter=",", skip_header=1)
    return np.atleast_1d(raw).astype(float)


def write_phase_samples(path, samples: PhaseCalibrationSamples,
                        fmt: str | None = None) -> None:
    if _infer_binary(path, fmt):
        np.column_stack([samples.amplitude, samples.angle,
                         samples.outcome]).astype("<f8").ravel().tofile(path)
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["A", "phi", "outcome"])
        for a, phi, out in zip(samples.amplitude, samples.angle, samples.outcome):
            w.writerow([_fmt(a), _fmt(phi), _fmt(out)])


def read_phase_samples(path, shot_noise: float,
                       fmt: str | None = None) -> PhaseCalibrationSamples:
    if _infer_binary(path, fmt):
        flat = np.fromfile(path, dtype="<f8")
        if flat.size % 3:
            raise ValueError(f"{path}: not a sequence of (A, phi, outcome) triples")
        t = flat.reshape(-1, 3)
        return PhaseCalibrationSamples(t[:, 0].copy(), t[:, 1].copy(),
                                       t[:, 2].copy(), shot_noise)
    data = np.genfromtxt(path, delimiter=",", names=True)
    return PhaseCalibrationSamples(
        np.atleast_1d(data["A"]).astype(float),
        np.atleast_1d(data["phi"]).astype(float),
        np.atleast_1d(data["outcome"]).astype(float), shot_noise)


# ---------------------------------------------------------------------------
# result tables and reports
# ---------------------------------------------------------------------------

def write_budget_csv(path, rows: list[dict]) -> None:
    """One row per certified configuration, fixed column schema."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BUDGET_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row.get(col)) for col in BUDGET_COLUMNS])


def write_curves_csv(path, distances_km, curves: dict) -> None:
    """Distance sweep: first column distance_km, one column per curve."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["distance_km"] + list(curves))
        for i, d in enumerate(distances_km):
            w.writerow([_fmt(d)] + [_fmt(c[i]) for c in curves.values()])


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj)!r}")


def write_manifest(outdir, command: str, config: dict) -> Path:
    """Record the fully resolved run configuration next to its outputs.

    Re-running the same command with ``--config manifest.json`` reproduces
    the run byte for byte (the output directory itself is not part of the
    recorded state).
    """
    from . import __version__

    path = Path(outdir) / "manifest.json"
    write_json(path, {"command": command, "config": config,
                      "version": __version__})
    return path


def read_config(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if "config" in data and isinstance(data["config"], dict):
        return data["config"]
    return data
