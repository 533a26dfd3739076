"""Snapshot files: legacy VTK structured points (ASCII) plus a JSON sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .mesh import GridSpec
from .scheme import SCALARS, State

SNAPSHOT_SCALARS = SCALARS


def _block(values: np.ndarray) -> str:
    return "\n".join(f"{v:.17g}" for v in values)


def write_snapshot(s: State, g: GridSpec, path, meta: dict | None = None) -> Path:
    """Write ``path`` (.vtk) and ``path`` with suffix .json.

    Scalars are sampled at cell centres; the velocity block holds the face
    velocities averaged to the centres.  x varies fastest, as VTK expects.
    """
    path = Path(path)
    n = g.nx * g.ny
    lines = [
        "# vtk DataFile Version 3.0",
        f"pfreact snapshot t={s.t:.17g}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {g.nx} {g.ny} 1",
        f"ORIGIN {0.5 * g.hx:.17g} {0.5 * g.hy:.17g} 0",
        f"SPACING {g.hx:.17g} {g.hy:.17g} 1",
        f"POINT_DATA {n}",
    ]
    for name in SNAPSHOT_SCALARS:
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default",
                  _block(np.asarray(getattr(s, name)).T.ravel())]
    ux, uy = s.u.centered()
    vec = np.column_stack([ux.T.ravel(), uy.T.ravel(), np.zeros(n)])
    lines.append("VECTORS velocity double")
    lines.append("\n".join(f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in vec))
    sidecar = {"t": s.t, "nx": g.nx, "ny": g.ny, "lx": g.lx, "ly": g.ly,
               "bc_x": g.bc_x, "bc_y": g.bc_y}
    sidecar.update(meta or {})
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=str))
    except OSError as exc:
        raise OSError(f"cannot write snapshot {path}: {exc}") from exc
    return path


def read_snapshot(path) -> dict:
    """Parse a snapshot written by :func:`write_snapshot`.

    Returns a dict with ``nx``, ``ny``, ``origin``, ``spacing``, every scalar as
    an ``(nx, ny)`` array, ``velocity`` as ``(nx, ny, 3)`` and ``meta`` (the
    sidecar contents, empty if absent).
    """
    path = Path(path)
    tokens = path.read_text().split("\n")
    out: dict = {}
    i = 0
    nx = ny = None
    while i < len(tokens):
        line = tokens[i].strip()
        parts = line.split()
        if not parts:
            i += 1
            continue
        key = parts[0]
        if key == "DIMENSIONS":
            nx, ny = int(parts[1]), int(parts[2])
            out["nx"], out["ny"] = nx, ny
        elif key == "ORIGIN":
            out["origin"] = tuple(float(v) for v in parts[1:4])
        elif key == "SPACING":
            out["spacing"] = tuple(float(v) for v in parts[1:4])
        elif key == "SCALARS":
            name = parts[1]
            vals = np.array([float(v) for v in tokens[i + 2: i + 2 + nx * ny]])
            out[name] = vals.reshape(ny, nx).T.copy()
            i += 2 + nx * ny
            continue
        elif key == "VECTORS":
            rows = [[float(v) for v in t.split()] for t in tokens[i + 1: i + 1 + nx * ny]]
            out["velocity"] = np.array(rows).reshape(ny, nx, 3).transpose(1, 0, 2).copy()
            i += 1 + nx * ny
            continue
        i += 1
    side = path.with_suffix(".json")
    out["meta"] = json.loads(side.read_text()) if side.exists() else {}
    return out
