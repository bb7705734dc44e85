"""VTK (legacy ASCII), CSV and JSON output."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .femspace import Field
from .mesh import Mesh

STEP_COLUMNS = ("step", "t", "L2_u", "energy_estimate")
_VTK_TRIANGLE = 5


def _point_array(mesh: Mesh, value) -> np.ndarray:
    if isinstance(value, Field):
        if value.space.mesh is not mesh and value.space.mesh.n_vertices != mesh.n_vertices:
            raise ValueError("field does not live on the given mesh")
        value = value.vertex_values()
    arr = np.asarray(value, dtype=float)
    if arr.shape[0] != mesh.n_vertices:
        raise ValueError(f"point field has {arr.shape[0]} rows, mesh has {mesh.n_vertices} vertices")
    return arr.reshape(mesh.n_vertices, -1)


def write_vtk(path, mesh: Mesh, point_fields: Mapping | None = None,
              cell_fields: Mapping | None = None, title: str = "avsfe") -> Path:
    """Unstructured triangle grid with optional point and cell arrays.

    Two-component arrays are written as 3D vectors with a zero z-component.
    """
    path = Path(path)
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_vertices} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    nt = mesh.n_triangles
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nt}")
    lines += [str(_VTK_TRIANGLE)] * nt
    for header, count, fields in (("POINT_DATA", mesh.n_vertices, point_fields),
                                  ("CELL_DATA", nt, cell_fields)):
        if not fields:
            continue
        lines.append(f"{header} {count}")
        for name, value in fields.items():
            arr = _point_array(mesh, value) if header == "POINT_DATA" else np.asarray(value, dtype=float).reshape(nt, -1)
            if arr.shape[0] != count:
                raise ValueError(f"{name}: expected {count} rows")
            name = str(name).replace(" ", "_")
            if arr.shape[1] == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [f"{v:.17g}" for v in arr[:, 0]]
            elif arr.shape[1] in (2, 3):
                lines.append(f"VECTORS {name} double")
                pad = np.zeros((count, 3))
                pad[:, :arr.shape[1]] = arr
                lines += [f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in pad]
            else:
                raise ValueError(f"{name}: unsupported number of components {arr.shape[1]}")
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc
    return path


@dataclass
class VtkData:
    vertices: np.ndarray
    triangles: np.ndarray
    point_data: dict = field(default_factory=dict)
    cell_data: dict = field(default_factory=dict)


def read_vtk(path) -> VtkData:
    """Read back a file written by :func:`write_vtk`."""
    path = Path(path)
    try:
        tokens = path.read_text().split("\n")
    except OSError as exc:
        raise OSError(f"cannot read VTK file {path}: {exc}") from exc
    it = iter(tokens[4:])
    verts = tris = None
    pdata, cdata = {}, {}
    target = None
    for line in it:
        parts = line.split()
        if not parts:
            continue
        key = parts[0]
        if key == "POINTS":
            n = int(parts[1])
            verts = np.array([[float(v) for v in next(it).split()[:2]] for _ in range(n)])
        elif key == "CELLS":
            n = int(parts[1])
            tris = np.array([[int(v) for v in next(it).split()[1:4]] for _ in range(n)], dtype=np.int64)
        elif key == "CELL_TYPES":
            for _ in range(int(parts[1])):
                next(it)
        elif key == "POINT_DATA":
            target, count = pdata, int(parts[1])
        elif key == "CELL_DATA":
            target, count = cdata, int(parts[1])
        elif key == "SCALARS":
            next(it)  # lookup table
            target[parts[1]] = np.array([float(next(it)) for _ in range(count)])
        elif key == "VECTORS":
            target[parts[1]] = np.array([[float(v) for v in next(it).split()] for _ in range(count)])
    if verts is None or tris is None:
        raise ValueError(f"{path}: missing POINTS or CELLS section")
    return VtkData(verts, tris, pdata, cdata)


def _cell(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_step_csv(path, rows, columns=STEP_COLUMNS) -> Path:
    """Per-step log of a time march."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])
    return path


def write_csv(report, path) -> Path:
    """Error report table (header only when the report is empty)."""
    return report.to_csv(path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path
