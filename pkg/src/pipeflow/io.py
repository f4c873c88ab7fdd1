"""File formats: legacy VTK output, CSV tables and Gmsh MSH 2.2 meshes."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .mesh import WALL, MeshError, PipeMesh

VTK_TRIANGLE = 5
VTK_TETRA = 10


def fmt(v) -> str:
    """Float as text with 17 significant digits, which round-trips exactly."""
    return "%.17g" % float(v)


# ----------------------------------------------------------------------
# VTK legacy ASCII


def write_vtk(path, mesh: PipeMesh, point_data: Mapping[str, np.ndarray], title: str = "pipeflow") -> Path:
    """Write an unstructured grid with point data.

    Arrays of shape ``(n_points,)`` become SCALARS, ``(n_points, k)`` with
    ``k <= 3`` become VECTORS padded to three components.
    """
    path = Path(path)
    n = mesh.n_points
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {n} double")
    pts = np.zeros((n, 3))
    pts[:, : mesh.dim] = mesh.points
    lines.extend(" ".join(fmt(c) for c in p) for p in pts)
    k = mesh.dim + 1
    lines.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (k + 1)}")
    lines.extend(f"{k} " + " ".join(str(int(v)) for v in c) for c in mesh.cells)
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    ctype = VTK_TRIANGLE if mesh.dim == 2 else VTK_TETRA
    lines.extend([str(ctype)] * mesh.n_cells)
    if point_data:
        lines.append(f"POINT_DATA {n}")
    for name, arr in point_data.items():
        arr = np.asarray(arr, dtype=float)
        if arr.shape[0] != n:
            raise ValueError(f"field {name!r} has {arr.shape[0]} values for {n} points")
        if arr.ndim == 1:
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(fmt(v) for v in arr)
        elif arr.ndim == 2 and arr.shape[1] <= 3:
            padded = np.zeros((n, 3))
            padded[:, : arr.shape[1]] = arr
            lines.append(f"VECTORS {name} double")
            lines.extend(" ".join(fmt(c) for c in row) for row in padded)
        else:
            raise ValueError(f"field {name!r} has unsupported shape {arr.shape}")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


# ----------------------------------------------------------------------
# CSV


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Header line then rows; floats use 17 significant digits."""
    path = Path(path)
    header = list(header)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            row = list(row)
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} entries, header has {len(header)}")
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path):
    """Returns ``(header, rows)``; numeric cells are parsed back to float/int."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = []
        for row in r:
            out = []
            for cell in row:
                try:
                    out.append(int(cell))
                except ValueError:
                    try:
                        out.append(float(cell))
                    except ValueError:
                        out.append(cell)
            rows.append(out)
    return header, rows


# ----------------------------------------------------------------------
# Gmsh MSH 2.2 (ASCII)

_MSH_NODES = {15: 1, 1: 2, 2: 3, 4: 4}
_MSH_UNSUPPORTED = {3: "quadrangle", 5: "hexahedron", 6: "prism", 7: "pyramid", 8: "line3", 9: "triangle6", 11: "tetra10"}
_MSH_BOUNDARY_TYPE = {2: 1, 3: 2}
_MSH_CELL_TYPE = {2: 2, 3: 4}


def _boundary_tag(name: str) -> int:
    if name == "wall":
        return WALL
    if name.startswith("cut_"):
        try:
            i = int(name[4:])
        except ValueError:
            i = 0
        if i >= 1:
            return i
    raise MeshError(f"unknown physical group {name!r} (expected 'wall' or 'cut_N' with N >= 1)")


def read_msh(path, name: str | None = None) -> PipeMesh:
    """Read an ASCII MSH 2.2 file with physical groups ``wall`` and ``cut_N``.

    Cells are the triangles (2D) or tetrahedra (3D); the dimension is that of
    the highest-order elements present.  Any other physical group on a
    boundary element is rejected.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8").split("\n")
    it = iter(enumerate(text, start=1))
    sections: dict[str, list[tuple[int, str]]] = {}
    for ln, line in it:
        s = line.strip()
        if s.startswith("$") and not s.startswith("$End"):
            key = s[1:]
            body = []
            for ln2, l2 in it:
                if l2.strip() == f"$End{key}":
                    break
                body.append((ln2, l2))
            else:
                raise MeshError(f"{path}: section ${key} is not terminated")
            sections[key] = body
    if "MeshFormat" not in sections:
        raise MeshError(f"{path}: missing $MeshFormat")
    version = sections["MeshFormat"][0][1].split()
    if not version or not version[0].startswith("2") or version[1] != "0":
        raise MeshError(f"{path}: only ASCII MSH 2.x is supported")
    for key in ("Nodes", "Elements"):
        if key not in sections:
            raise MeshError(f"{path}: missing ${key}")
    names: dict[int, tuple[int, str]] = {}
    for ln, line in sections.get("PhysicalNames", [])[1:]:
        parts = line.split(maxsplit=2)
        names[int(parts[1])] = (int(parts[0]), parts[2].strip().strip('"'))

    node_lines = sections["Nodes"][1:]
    ids = np.array([int(l.split()[0]) for _, l in node_lines])
    xyz = np.array([[float(v) for v in l.split()[1:4]] for _, l in node_lines])
    index = {int(i): k for k, i in enumerate(ids)}

    elems = []
    for ln, line in sections["Elements"][1:]:
        parts = [int(v) for v in line.split()]
        etype, ntags = parts[1], parts[2]
        if etype in _MSH_UNSUPPORTED:
            raise MeshError(f"{path}: line {ln}: unsupported element type {_MSH_UNSUPPORTED[etype]}")
        if etype not in _MSH_NODES:
            raise MeshError(f"{path}: line {ln}: unknown element type {etype}")
        phys = parts[3] if ntags > 0 else 0
        nodes = [index[v] for v in parts[3 + ntags:]]
        if len(nodes) != _MSH_NODES[etype]:
            raise MeshError(f"{path}: line {ln}: wrong node count")
        elems.append((ln, etype, phys, nodes))

    types = {e[1] for e in elems}
    dim = 3 if 4 in types else 2 if 2 in types else 0
    if dim == 0:
        raise MeshError(f"{path}: no triangle or tetrahedron cells")
    if dim == 3 and 2 in types and any(e[1] == 2 and names.get(e[2], (2, ""))[0] == 3 for e in elems):
        raise MeshError(f"{path}: mixed triangle and tetrahedron cells")
    cell_type = _MSH_CELL_TYPE[dim]
    bnd_type = _MSH_BOUNDARY_TYPE[dim]
    cells = [e[3] for e in elems if e[1] == cell_type]
    boundary: dict[tuple[int, ...], int] = {}
    for ln, etype, phys, nodes in elems:
        if etype != bnd_type:
            continue
        if phys not in names:
            raise MeshError(f"{path}: line {ln}: boundary element without a named physical group")
        boundary[tuple(sorted(nodes))] = _boundary_tag(names[phys][1])
    if not any(t != WALL for t in boundary.values()):
        raise MeshError(f"{path}: missing cut group (no 'cut_N' boundary elements)")
    if not any(t == WALL for t in boundary.values()):
        raise MeshError(f"{path}: missing 'wall' group")
    # drop nodes not used by cells (e.g. geometry points)
    used = np.unique(np.array(cells))
    remap = -np.ones(len(xyz), dtype=np.int64)
    remap[used] = np.arange(len(used))
    pts = xyz[used][:, :dim]
    cells_arr = remap[np.array(cells)]
    bmap = {tuple(sorted(int(remap[v]) for v in k)): t for k, t in boundary.items()}
    return PipeMesh(pts, cells_arr, bmap, name=name or path.stem)


def write_msh(path, mesh: PipeMesh) -> Path:
    """Write ``mesh`` as ASCII MSH 2.2 with groups ``fluid``, ``wall``, ``cut_N``."""
    path = Path(path)
    d = mesh.dim
    groups = {WALL: (d - 1, 1, "wall")}
    for i in mesh.cut_ids:
        groups[i] = (d - 1, i + 1, f"cut_{i}")
    fluid = max(g[1] for g in groups.values()) + 1
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames", str(len(groups) + 1)]
    for dd, tag, nm in groups.values():
        out.append(f'{dd} {tag} "{nm}"')
    out.append(f'{d} {fluid} "fluid"')
    out += ["$EndPhysicalNames", "$Nodes", str(mesh.n_points)]
    pts = np.zeros((mesh.n_points, 3))
    pts[:, :d] = mesh.points
    out.extend(f"{k + 1} " + " ".join(fmt(c) for c in p) for k, p in enumerate(pts))
    out += ["$EndNodes", "$Elements", str(len(mesh.facets) + mesh.n_cells)]
    eid = 1
    btype = _MSH_BOUNDARY_TYPE[d]
    for facet, tag in zip(mesh.facets, mesh.facet_tags):
        phys = groups[int(tag)][1]
        out.append(f"{eid} {btype} 2 {phys} {phys} " + " ".join(str(int(v) + 1) for v in facet))
        eid += 1
    ctype = _MSH_CELL_TYPE[d]
    for c in mesh.cells:
        out.append(f"{eid} {ctype} 2 {fluid} {fluid} " + " ".join(str(int(v) + 1) for v in c))
        eid += 1
    out.append("$EndElements")
    path.write_text("\n".join(out) + "\n", encoding="ascii")
    return path
