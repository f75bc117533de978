"""Flat-binary dumps of grid fields with a JSON sidecar."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grid import Grid


def dump_grid_field(path, values: np.ndarray, grid: Grid, time: float = 0.0, name: str = "field") -> tuple[Path, Path]:
    """Write ``values`` as little-endian float64 in x-fastest order; returns (bin, json) paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(grid.to_xfastest(values), dtype="<f8")
    bin_path = path.with_suffix(".bin")
    data.tofile(bin_path)
    meta = {
        "name": name,
        "dims": [int(s) for s in grid.shape],
        "h": grid.h,
        "origin": [float(o) for o in grid.origin],
        "time": float(time),
        "dtype": "float64-le",
        "order": "x-fastest",
    }
    json_path = path.with_suffix(".json")
    json_path.write_text(json.dumps(meta, indent=2) + "\n")
    return bin_path, json_path


def load_grid_field(path) -> tuple[np.ndarray, dict]:
    """Read a dump back as an (nx, ny, nz) array plus its metadata."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    raw = np.fromfile(path.with_suffix(".bin"), dtype="<f8")
    return raw.reshape(meta["dims"], order="F"), meta
