"""Simplicial meshes of truncated pipe systems.

A :class:`PipeMesh` carries triangles (2D) or tetrahedra (3D) and a tag on
every boundary facet: ``WALL`` (0) for the lateral walls and ``i >= 1`` for
the i-th flat cut through which fluid may enter or leave.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.spatial import Delaunay

WALL = 0

_FLAT_RTOL = 1e-8
_ANGLE_TOL_DEG = 2.0


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class CutPlane:
    index: int
    point: np.ndarray
    normal: np.ndarray


def _facet_normals(points: np.ndarray, facets: np.ndarray, opposite: np.ndarray):
    """Unit outward normals and measures of boundary facets."""
    d = points.shape[1]
    x = points[facets]
    if d == 2:
        t = x[:, 1] - x[:, 0]
        n = np.column_stack([t[:, 1], -t[:, 0]])
        area = np.linalg.norm(n, axis=1)
    else:
        n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        area = 0.5 * np.linalg.norm(n, axis=1)
    n = n / np.linalg.norm(n, axis=1)[:, None]
    away = x.mean(axis=1) - points[opposite]
    n *= np.where(np.einsum("ij,ij->i", n, away) < 0, -1.0, 1.0)[:, None]
    return n, area


def signed_volumes(points: np.ndarray, cells: np.ndarray) -> np.ndarray:
    x = points[cells]
    jac = np.transpose(x[:, 1:] - x[:, :1], (0, 2, 1))
    return np.linalg.det(jac) / math.factorial(points.shape[1])


class PipeMesh:
    """Immutable tagged simplicial mesh.

    ``boundary`` maps a sorted tuple of facet vertex ids to its tag; every
    boundary facet of ``cells`` must appear exactly once.
    """

    def __init__(self, points, cells, boundary: dict[tuple[int, ...], int], name: str = "mesh"):
        points = np.ascontiguousarray(points, dtype=float)
        cells = np.ascontiguousarray(cells, dtype=np.int64)
        if points.ndim != 2 or points.shape[1] not in (2, 3):
            raise MeshError("points must have shape (n, 2) or (n, 3)")
        dim = points.shape[1]
        if cells.ndim != 2 or cells.shape[1] != dim + 1 or len(cells) == 0:
            raise MeshError(f"cells must be a nonempty (n, {dim + 1}) array")
        vol = signed_volumes(points, cells)
        scale = np.ptp(points, axis=0).max()
        if np.any(np.abs(vol) <= 1e-14 * scale**dim):
            raise MeshError("degenerate cell with zero volume")
        flip = vol < 0
        if flip.any():
            cells = cells.copy()
            cells[flip, 0], cells[flip, 1] = cells[flip, 1].copy(), cells[flip, 0].copy()

        self.name = name
        self.dim = dim
        self.points = points
        self.cells = cells
        self.volumes = np.abs(vol)

        # all cell facets; local facet k is opposite local vertex k
        nc = len(cells)
        local = np.array([[j for j in range(dim + 1) if j != k] for k in range(dim + 1)])
        all_facets = cells[:, local].reshape(-1, dim)
        keys = np.sort(all_facets, axis=1)
        uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts > 2):
            raise MeshError("non-manifold mesh: facet shared by more than two cells")
        bmask = counts[inverse] == 1
        bidx = np.flatnonzero(bmask)
        facet_cell = bidx // (dim + 1)
        facet_local = bidx % (dim + 1)
        facets = all_facets[bidx]
        tags = np.empty(len(bidx), dtype=np.int64)
        boundary = {tuple(sorted(int(v) for v in k)): int(t) for k, t in boundary.items()}
        seen = 0
        for i, key in enumerate(map(tuple, np.sort(facets, axis=1).tolist())):
            if key not in boundary:
                raise MeshError(f"boundary facet {key} carries no tag")
            tags[i] = boundary[key]
            seen += 1
        if seen != len(boundary):
            raise MeshError("tagged facets that are not on the boundary (non-manifold boundary)")
        order = np.lexsort((facet_local, facet_cell))
        self.facet_cell = facet_cell[order]
        self.facet_local = facet_local[order]
        self.facets = facets[order]
        self.facet_tags = tags[order]
        opposite = cells[self.facet_cell, self.facet_local]
        self.facet_normals, self.facet_areas = _facet_normals(points, self.facets, opposite)

        if not np.any(self.facet_tags == WALL):
            raise MeshError("wall boundary is empty")
        cut_ids = sorted(int(t) for t in np.unique(self.facet_tags) if t != WALL)
        if not cut_ids:
            raise MeshError("open boundary is empty: no cut facets")
        if np.any(self.facet_tags < 0):
            raise MeshError("negative facet tag")
        self.cuts: dict[int, CutPlane] = {}
        owners: dict[int, int] = {}
        for i in cut_ids:
            sel = self.facet_tags == i
            a = self.facet_areas[sel]
            c = points[self.facets[sel]].mean(axis=1)
            normal = (self.facet_normals[sel] * a[:, None]).sum(axis=0)
            normal /= np.linalg.norm(normal)
            point = (c * a[:, None]).sum(axis=0) / a.sum()
            self.cuts[i] = CutPlane(i, point, normal)
            for v in np.unique(self.facets[sel]):
                if owners.setdefault(int(v), i) != i:
                    raise MeshError(f"cuts {owners[int(v)]} and {i} intersect")

    # ------------------------------------------------------------------
    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def cut_ids(self) -> list[int]:
        return sorted(self.cuts)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(np.ptp(self.points, axis=0)))

    def facets_with_tag(self, tag: int) -> np.ndarray:
        return np.flatnonzero(self.facet_tags == tag)

    def cut_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_tags != WALL)

    def boundary_map(self) -> dict[tuple[int, ...], int]:
        return {
            tuple(sorted(int(v) for v in f)): int(t) for f, t in zip(self.facets, self.facet_tags)
        }

    def with_points(self, points) -> "PipeMesh":
        """Same topology and tags on moved vertices."""
        return PipeMesh(points, self.cells, self.boundary_map(), name=self.name)

    def measure(self) -> float:
        return float(self.volumes.sum())

    def wall_measure(self) -> float:
        return float(self.facet_areas[self.facet_tags == WALL].sum())

    def __repr__(self):
        return (
            f"PipeMesh({self.name!r}, dim={self.dim}, points={self.n_points}, "
            f"cells={self.n_cells}, cuts={self.cut_ids})"
        )


# ----------------------------------------------------------------------
# generation


@dataclass(frozen=True)
class Branch:
    """Straight pipe segment; ``radius`` is the half-width in 2D."""

    start: tuple[float, ...]
    end: tuple[float, ...]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        object.__setattr__(self, "end", tuple(float(v) for v in self.end))
        if len(self.start) != len(self.end) or len(self.start) not in (2, 3):
            raise MeshError("branch endpoints must both be 2D or both 3D")
        if not self.radius > 0:
            raise MeshError("branch radius must be positive")
        if self.length <= 0:
            raise MeshError("branch axis has zero length")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.end, self.start)))

    @property
    def axis(self) -> np.ndarray:
        return np.subtract(self.end, self.start) / self.length


@dataclass(frozen=True)
class PipeSpec:
    branches: tuple[Branch, ...]
    h: float
    name: str = field(default="pipe")

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        if not self.branches:
            raise MeshError("pipe spec needs at least one branch")
        if not self.h > 0:
            raise MeshError("mesh size h must be positive")
        dims = {len(b.start) for b in self.branches}
        if len(dims) != 1:
            raise MeshError("all branches must have the same dimension")

    @property
    def dim(self) -> int:
        return len(self.branches[0].start)


def channel_spec(length=4.0, half_width=1.0, h=0.1, x0=0.0) -> PipeSpec:
    """The 2D channel [x0, x0+length] x [-half_width, half_width]."""
    return PipeSpec((Branch((x0, 0.0), (x0 + length, 0.0), half_width),), h, name=f"channel-h{h:g}")


def _tag_by_planes(points, cells, planes, tol):
    """Boundary map: facets lying on an end plane within its radius become cuts."""
    dim = points.shape[1]
    local = [[j for j in range(dim + 1) if j != k] for k in range(dim + 1)]
    all_f = np.sort(cells[:, local].reshape(-1, dim), axis=1)
    uniq, counts = np.unique(all_f, axis=0, return_counts=True)
    bfac = uniq[counts == 1]
    x = points[bfac]
    tags = np.zeros(len(bfac), dtype=np.int64)
    next_id = 1
    for p, n, r in planes:
        off = np.abs((x - p) @ n).max(axis=1)
        radial = np.linalg.norm((x - p) - ((x - p) @ n)[..., None] * n, axis=2).max(axis=1)
        hit = (off <= tol) & (radial <= r + tol) & (tags == WALL)
        if hit.any():
            tags[hit] = next_id
            next_id += 1
    return {tuple(int(v) for v in f): int(t) for f, t in zip(bfac, tags)}


def _grid_axis(breaks, h):
    out = [breaks[0]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, math.ceil((b - a) / h - 1e-9))
        out.extend(a + (b - a) * np.arange(1, n + 1) / n)
    return np.array(out)


def _generate_2d(spec: PipeSpec):
    branches = spec.branches
    if len(branches) == 1:
        b = branches[0]
        ax = b.axis
        frame = np.array([ax, [-ax[1], ax[0]]])
        rects = [(0.0, b.length, -b.radius, b.radius)]
        origin = np.array(b.start)
    else:
        rects = []
        for b in branches:
            ax = b.axis
            if not (np.isclose(abs(ax[0]), 1.0) or np.isclose(abs(ax[1]), 1.0)):
                raise MeshError("junction meshes need axis-aligned branches")
            lo = np.minimum(b.start, b.end)
            hi = np.maximum(b.start, b.end)
            if np.isclose(abs(ax[0]), 1.0):
                rects.append((lo[0], hi[0], b.start[1] - b.radius, b.start[1] + b.radius))
            else:
                rects.append((b.start[0] - b.radius, b.start[0] + b.radius, lo[1], hi[1]))
        frame = np.eye(2)
        origin = np.zeros(2)
    xs = _grid_axis(sorted({r[0] for r in rects} | {r[1] for r in rects}), spec.h)
    ys = _grid_axis(sorted({r[2] for r in rects} | {r[3] for r in rects}), spec.h)
    nx, ny = len(xs), len(ys)
    xc = 0.5 * (xs[:-1] + xs[1:])
    yc = 0.5 * (ys[:-1] + ys[1:])
    XC, YC = np.meshgrid(xc, yc, indexing="ij")
    inside = np.zeros(XC.shape, dtype=bool)
    for x0, x1, y0, y1 in rects:
        inside |= (XC > x0) & (XC < x1) & (YC > y0) & (YC < y1)
    I, J = np.nonzero(inside)
    vid = lambda i, j: i * ny + j  # noqa: E731
    a, b_, c, d = vid(I, J), vid(I + 1, J), vid(I + 1, J + 1), vid(I, J + 1)
    cells = np.concatenate([np.column_stack([a, b_, c]), np.column_stack([a, c, d])])
    used, cells = np.unique(cells, return_inverse=True)
    cells = cells.reshape(-1, 3)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    local = np.column_stack([X.ravel(), Y.ravel()])[used]
    points = origin + local @ frame
    return points, cells


def _disk_points(radius, h):
    nr = max(2, math.ceil(radius / h))
    pts = [np.zeros((1, 2))]
    for k in range(1, nr + 1):
        r = radius * k / nr
        m = max(6, math.ceil(2 * math.pi * r / h))
        ang = 2 * math.pi * np.arange(m) / m + (0.5 * math.pi / m) * (k % 2)
        pts.append(r * np.column_stack([np.cos(ang), np.sin(ang)]))
    return np.concatenate(pts)


def _generate_cylinder(spec: PipeSpec):
    if len(spec.branches) != 1:
        raise MeshError("3D generation supports a single straight branch")
    b = spec.branches[0]
    disk = _disk_points(b.radius, spec.h)
    tri = Delaunay(disk).simplices.astype(np.int64)
    a, c = disk[tri[:, 1]] - disk[tri[:, 0]], disk[tri[:, 2]] - disk[tri[:, 0]]
    area = 0.5 * np.abs(a[:, 0] * c[:, 1] - a[:, 1] * c[:, 0])
    tri = np.sort(tri[area > 1e-12 * b.radius**2], axis=1)
    nz = max(1, math.ceil(b.length / spec.h - 1e-9))
    z = b.length * np.arange(nz + 1) / nz
    m = len(disk)
    local = np.concatenate([np.column_stack([disk, np.full(m, zk)]) for zk in z])
    tets = []
    for k in range(nz):
        v0, v1, v2 = (tri[:, i] + k * m for i in range(3))
        w0, w1, w2 = v0 + m, v1 + m, v2 + m
        tets += [
            np.column_stack([v0, v1, v2, w2]),
            np.column_stack([v0, v1, w1, w2]),
            np.column_stack([v0, w0, w1, w2]),
        ]
    cells = np.concatenate(tets)
    ax = b.axis
    helper = np.eye(3)[np.argmin(np.abs(ax))]
    e1 = np.cross(ax, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(ax, e1)
    points = np.array(b.start) + local @ np.array([e1, e2, ax])
    return points, cells


def generate_pipe(spec: PipeSpec) -> PipeMesh:
    """Mesh a pipe system and tag walls and cuts.

    Branch ends whose cross-section lies on the outer boundary become cuts,
    numbered 1, 2, ... in branch order (start before end).
    """
    if spec.dim == 2:
        points, cells = _generate_2d(spec)
    else:
        points, cells = _generate_cylinder(spec)
    planes = []
    for b in spec.branches:
        ax = b.axis
        planes.append((np.array(b.start), -ax, b.radius))
        planes.append((np.array(b.end), ax, b.radius))
    scale = max(np.ptp(points, axis=0).max(), 1.0)
    boundary = _tag_by_planes(points, cells, planes, 1e-9 * scale)
    return PipeMesh(points, cells, boundary, name=spec.name)


def unit_square_mesh(n: int) -> PipeMesh:
    """Unit square with walls y=0, y=1 and cuts x=0 (1), x=1 (2)."""
    spec = PipeSpec((Branch((0.0, 0.5), (1.0, 0.5), 0.5),), 1.0 / n, name=f"square-{n}")
    return generate_pipe(spec)


# ----------------------------------------------------------------------
# validation


def cell_quality(mesh: PipeMesh) -> np.ndarray:
    """Volume over mean-edge-length^d, normalised to 1 for a regular simplex."""
    d = mesh.dim
    x = mesh.points[mesh.cells]
    edges = [np.linalg.norm(x[:, i] - x[:, j], axis=1) for i, j in combinations(range(d + 1), 2)]
    mean = np.mean(edges, axis=0)
    ideal = math.sqrt(3) / 4 if d == 2 else 1 / (6 * math.sqrt(2))
    return mesh.volumes / mean**d / ideal


@dataclass
class GeometryReport:
    flatness: dict[int, float]
    angle_deviation_deg: float
    min_quality: float
    normal_sum: float
    passed: bool
    problems: list[str]


def validate_geometry(mesh: PipeMesh) -> GeometryReport:
    """Check cut flatness, wall/cut right angles and element quality."""
    problems = []
    diam = mesh.diameter
    flatness = {}
    for i, cut in mesh.cuts.items():
        verts = np.unique(mesh.facets[mesh.facet_tags == i])
        dev = float(np.abs((mesh.points[verts] - cut.point) @ cut.normal).max())
        flatness[i] = dev
        if dev > _FLAT_RTOL * diam:
            problems.append(f"cut {i} is not flat: deviation {dev:.3g}")

    # wall/cut facet pairs sharing a (d-1)-subsimplex along the edge set
    sub = {}
    for f, (verts, tag) in enumerate(zip(mesh.facets, mesh.facet_tags)):
        for s in combinations(sorted(int(v) for v in verts), mesh.dim - 1):
            sub.setdefault(s, []).append(f)
    worst = 0.0
    for faces in sub.values():
        walls = [f for f in faces if mesh.facet_tags[f] == WALL]
        cuts = [f for f in faces if mesh.facet_tags[f] != WALL]
        for w in walls:
            for c in cuts:
                cosang = float(np.clip(mesh.facet_normals[w] @ mesh.facet_normals[c], -1, 1))
                worst = max(worst, abs(math.degrees(math.acos(cosang)) - 90.0))
    if worst > _ANGLE_TOL_DEG:
        problems.append(f"wall/cut angle deviates from 90 degrees by {worst:.3g}")

    q = float(cell_quality(mesh).min())
    nsum = float(np.linalg.norm((mesh.facet_normals * mesh.facet_areas[:, None]).sum(axis=0)))
    return GeometryReport(flatness, worst, q, nsum, not problems, problems)
