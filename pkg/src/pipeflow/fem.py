"""Lagrange P1/P2 spaces on simplices and assembly of the model's forms.

Vector-valued spaces store coefficients component-major: entry
``c * n_nodes + k`` is component ``c`` at scalar node ``k``.  All operators
are returned as CSR matrices; loads as dense 1D arrays.  Coefficient fields
(diffusivity, density) are passed as nodal values and interpolated to
quadrature points with the space's own basis.
"""
from __future__ import annotations

import math
from functools import cached_property
from itertools import combinations

import numpy as np
import scipy.sparse as sp

from .mesh import WALL, PipeMesh
from .quadrature import simplex_rule

DEFAULT_DEGREE = 5  # 2 * (velocity degree) + 1


class SpaceMismatch(ValueError):
    pass


def reference_basis(degree: int, dim: int, xi: np.ndarray):
    """Values ``(nq, nloc)`` and reference gradients ``(nq, nloc, dim)``.

    Local order: vertices, then edges ``(i, j)`` in ``combinations`` order.
    """
    xi = np.atleast_2d(xi)
    nq = len(xi)
    lam = np.column_stack([1.0 - xi.sum(axis=1), xi])
    dlam = np.vstack([-np.ones(dim), np.eye(dim)])  # (dim+1, dim)
    if degree == 1:
        return lam, np.broadcast_to(dlam, (nq, dim + 1, dim)).copy()
    if degree != 2:
        raise ValueError(f"unsupported degree {degree}")
    phi = [lam[:, i] * (2 * lam[:, i] - 1) for i in range(dim + 1)]
    dphi = [(4 * lam[:, i] - 1)[:, None] * dlam[i] for i in range(dim + 1)]
    for i, j in combinations(range(dim + 1), 2):
        phi.append(4 * lam[:, i] * lam[:, j])
        dphi.append(4 * (lam[:, j][:, None] * dlam[i] + lam[:, i][:, None] * dlam[j]))
    return np.column_stack(phi), np.stack(dphi, axis=1)


class FeSpace:
    """Continuous Lagrange space of ``degree`` 1 or 2 with ``ncomp`` components.

    ``dirichlet=True`` marks every node on the closure of the wall boundary,
    which includes the edge set where walls meet cuts.  A boolean array over
    scalar nodes may be passed instead.
    """

    def __init__(self, mesh: PipeMesh, degree: int = 1, ncomp: int = 1, dirichlet=False):
        if degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self.ncomp = ncomp
        d = mesh.dim
        if degree == 1:
            self.cell_dofs = mesh.cells
            self.nodes = mesh.points
            self._edge_of_cell = None
        else:
            pairs = list(combinations(range(d + 1), 2))
            keys = np.sort(
                np.stack([mesh.cells[:, [i, j]] for i, j in pairs], axis=1).reshape(-1, 2), axis=1
            )
            edges, inv = np.unique(keys, axis=0, return_inverse=True)
            inv = inv.reshape(mesh.n_cells, len(pairs))
            self.edges = edges
            self.cell_dofs = np.hstack([mesh.cells, mesh.n_points + inv])
            self.nodes = np.vstack([mesh.points, mesh.points[edges].mean(axis=1)])
        self.n_nodes = len(self.nodes)
        self.ndofs = self.n_nodes * ncomp
        self.nloc = self.cell_dofs.shape[1]

        if isinstance(dirichlet, (bool, np.bool_)):
            mask = np.zeros(self.n_nodes, dtype=bool)
            if dirichlet:
                walls = mesh.facets_with_tag(WALL)
                fd = self.facet_dofs(walls)
                mask[np.unique(fd)] = True
        else:
            mask = np.asarray(dirichlet, dtype=bool)
            if mask.shape != (self.n_nodes,):
                raise SpaceMismatch("dirichlet mask must cover the scalar nodes")
        self.dirichlet_nodes = mask
        self.dirichlet_mask = np.tile(mask, ncomp)
        self.free_dofs = np.flatnonzero(~self.dirichlet_mask)

    @cached_property
    def _facet_local_dofs(self) -> np.ndarray:
        """``(dim+1, nfloc)`` local dofs on the facet opposite each local vertex."""
        d = self.mesh.dim
        rows = []
        for k in range(d + 1):
            loc = [j for j in range(d + 1) if j != k]
            if self.degree == 2:
                for e, (i, j) in enumerate(combinations(range(d + 1), 2)):
                    if k not in (i, j):
                        loc.append(d + 1 + e)
            rows.append(loc)
        return np.array(rows)

    def facet_dofs(self, facet_ids) -> np.ndarray:
        m = self.mesh
        cells = m.facet_cell[facet_ids]
        loc = self._facet_local_dofs[m.facet_local[facet_ids]]
        return np.take_along_axis(self.cell_dofs[cells], loc, axis=1)

    def vector_dofs(self, comp: int) -> slice:
        return slice(comp * self.n_nodes, (comp + 1) * self.n_nodes)

    def interpolate(self, fn, t: float = 0.0) -> np.ndarray:
        """Nodal interpolant of ``fn(x, t)`` (or a constant)."""
        vals = evaluate(fn, self.nodes, t, () if self.ncomp == 1 else (self.ncomp,))
        return np.ascontiguousarray(vals.T.ravel() if self.ncomp > 1 else vals, dtype=float)

    def components(self, coeffs) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] != self.ndofs:
            raise SpaceMismatch(f"expected {self.ndofs} coefficients, got {coeffs.shape[-1]}")
        return coeffs.reshape(coeffs.shape[:-1] + (self.ncomp, self.n_nodes))

    def vertex_values(self, coeffs) -> np.ndarray:
        """Values at mesh vertices, shape ``(nv,)`` or ``(nv, ncomp)``."""
        c = self.components(coeffs)[..., : self.mesh.n_points]
        return c[0] if self.ncomp == 1 else np.moveaxis(c, -2, -1)

    def scalar(self) -> "FeSpace":
        return FeSpace(self.mesh, self.degree, 1, self.dirichlet_nodes)

    def __repr__(self):
        return f"FeSpace(P{self.degree}, ncomp={self.ncomp}, ndofs={self.ndofs})"


def evaluate(data, x, t=0.0, shape=()):
    """Evaluate a datum (constant, array-like or callable ``f(x, t)``) at points ``x``."""
    target = x.shape[:-1] + tuple(shape)
    if callable(data):
        out = np.asarray(data(x, t), dtype=float)
    else:
        out = np.asarray(data, dtype=float)
    if out.shape != target:
        out = np.broadcast_to(out, target)
    if not np.all(np.isfinite(out)):
        raise ValueError("datum evaluated to non-finite values")
    return out


# ----------------------------------------------------------------------
# quadrature on cells and boundary facets


class CellQuadrature:
    def __init__(self, mesh: PipeMesh, degree: int = DEFAULT_DEGREE):
        self.mesh = mesh
        self.degree = degree
        self.ref_points, self.ref_weights = simplex_rule(mesh.dim, degree)
        x = mesh.points[mesh.cells]
        self.x0 = x[:, 0]
        self.jac = np.transpose(x[:, 1:] - x[:, :1], (0, 2, 1))  # (nc, d, d)
        self.inv_jac = np.linalg.inv(self.jac)
        det = np.abs(np.linalg.det(self.jac))
        self.dx = det[:, None] * self.ref_weights[None, :]
        self.points = self.x0[:, None, :] + np.einsum("cij,qj->cqi", self.jac, self.ref_points)
        self._cache = {}

    def basis(self, space: FeSpace):
        """``phi (nq, nloc)`` and physical gradients ``(nc, nq, nloc, d)``."""
        key = space.degree
        if key not in self._cache:
            phi, dref = reference_basis(space.degree, self.mesh.dim, self.ref_points)
            grad = np.einsum("qak,ckj->cqaj", dref, self.inv_jac)
            self._cache[key] = (phi, grad)
        return self._cache[key]

    def values(self, space: FeSpace, coeffs):
        phi, _ = self.basis(space)
        c = space.components(coeffs)[..., space.cell_dofs]  # (ncomp, nc, nloc)
        v = np.einsum("mca,qa->cqm", c, phi)
        return v[..., 0] if space.ncomp == 1 else v

    def gradients(self, space: FeSpace, coeffs):
        _, grad = self.basis(space)
        c = space.components(coeffs)[..., space.cell_dofs]
        g = np.einsum("mca,cqaj->cqmj", c, grad)
        return g[:, :, 0] if space.ncomp == 1 else g

    def integrate(self, values) -> float:
        return float(np.einsum("cq,cq->", values, self.dx))


class FacetQuadrature:
    """Quadrature on a subset of boundary facets, with cell-based basis evaluation."""

    def __init__(self, mesh: PipeMesh, facet_ids, degree: int = DEFAULT_DEGREE):
        self.mesh = mesh
        self.facet_ids = np.asarray(facet_ids, dtype=np.int64)
        d = mesh.dim
        t, w = simplex_rule(d - 1, degree)
        verts = np.vstack([np.zeros(d), np.eye(d)])
        xi = []
        for k in range(d + 1):
            fv = verts[[j for j in range(d + 1) if j != k]]
            xi.append(fv[0] + t @ (fv[1:] - fv[0]))
        self.xi_by_local = np.stack(xi)  # (d+1, nqf, d)
        cells = mesh.facet_cell[self.facet_ids]
        self.cells = cells
        self.local = mesh.facet_local[self.facet_ids]
        x = mesh.points[mesh.cells[cells]]
        jac = np.transpose(x[:, 1:] - x[:, :1], (0, 2, 1))
        self.inv_jac = np.linalg.inv(jac) if len(cells) else np.zeros((0, d, d))
        self.xi = self.xi_by_local[self.local]  # (nf, nqf, d)
        self.points = x[:, 0][:, None, :] + np.einsum("fij,fqj->fqi", jac, self.xi)
        area = mesh.facet_areas[self.facet_ids]
        self.ds = area[:, None] * (w * math.factorial(d - 1))[None, :]
        self.normals = mesh.facet_normals[self.facet_ids]
        self._cache = {}

    def basis(self, space: FeSpace):
        key = space.degree
        if key not in self._cache:
            d = self.mesh.dim
            nq = self.xi_by_local.shape[1]
            flat = self.xi_by_local.reshape(-1, d)
            phi, dref = reference_basis(space.degree, d, flat)
            phi = phi.reshape(d + 1, nq, -1)[self.local]
            dref = dref.reshape(d + 1, nq, -1, d)[self.local]
            grad = np.einsum("fqak,fkj->fqaj", dref, self.inv_jac)
            self._cache[key] = (phi, grad)
        return self._cache[key]

    def dofs(self, space: FeSpace) -> np.ndarray:
        return space.cell_dofs[self.cells]

    def values(self, space: FeSpace, coeffs):
        phi, _ = self.basis(space)
        c = space.components(coeffs)[..., space.cell_dofs[self.cells]]  # (m, nf, nloc)
        v = np.einsum("mfa,fqa->fqm", c, phi)
        return v[..., 0] if space.ncomp == 1 else v

    def gradients(self, space: FeSpace, coeffs):
        _, grad = self.basis(space)
        c = space.components(coeffs)[..., space.cell_dofs[self.cells]]
        g = np.einsum("mfa,fqaj->fqmj", c, grad)
        return g[:, :, 0] if space.ncomp == 1 else g

    def integrate(self, values) -> float:
        return float(np.einsum("fq,fq->", values, self.ds))


def cell_quadrature(mesh: PipeMesh, degree: int = DEFAULT_DEGREE) -> CellQuadrature:
    cache = mesh.__dict__.setdefault("_cell_quad", {})
    if degree not in cache:
        cache[degree] = CellQuadrature(mesh, degree)
    return cache[degree]


def facet_quadrature(mesh: PipeMesh, tag, degree: int = DEFAULT_DEGREE) -> FacetQuadrature:
    """Facets with a given tag; ``tag="cuts"`` selects every cut facet."""
    cache = mesh.__dict__.setdefault("_facet_quad", {})
    key = (tag, degree)
    if key not in cache:
        ids = mesh.cut_facets() if tag == "cuts" else mesh.facets_with_tag(tag)
        cache[key] = FacetQuadrature(mesh, ids, degree)
    return cache[key]


# ----------------------------------------------------------------------
# scatter helpers


def _matrix(local, rows, cols, shape) -> sp.csr_matrix:
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    mat = sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()
    mat.sum_duplicates()
    return mat


def _vector(local, dofs, n) -> np.ndarray:
    return np.bincount(dofs.ravel(), weights=local.ravel(), minlength=n)


def _blockdiag(mat: sp.spmatrix, ncomp: int) -> sp.csr_matrix:
    if ncomp == 1:
        return mat.tocsr()
    return sp.block_diag([mat] * ncomp, format="csr")


def _check_coeff(name, arr, n):
    arr = np.asarray(arr, dtype=float)
    if arr.shape != (n,):
        raise SpaceMismatch(f"{name}: expected {n} coefficients, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


# ----------------------------------------------------------------------
# forms


def assemble_mass(space: FeSpace, quad: CellQuadrature | None = None) -> sp.csr_matrix:
    """(u, v) over the domain."""
    quad = quad or cell_quadrature(space.mesh)
    phi, _ = quad.basis(space)
    local = np.einsum("qa,qb,cq->cab", phi, phi, quad.dx)
    n = space.n_nodes
    return _blockdiag(_matrix(local, space.cell_dofs, space.cell_dofs, (n, n)), space.ncomp)


def assemble_stiffness(space: FeSpace, quad=None) -> sp.csr_matrix:
    quad = quad or cell_quadrature(space.mesh)
    _, grad = quad.basis(space)
    local = np.einsum("cqaj,cqbj,cq->cab", grad, grad, quad.dx)
    n = space.n_nodes
    return _blockdiag(_matrix(local, space.cell_dofs, space.cell_dofs, (n, n)), space.ncomp)


def assemble_a_u(space: FeSpace, quad=None) -> sp.csr_matrix:
    """a_u(u, v) = int grad u : grad v (full gradient, not symmetric gradient)."""
    if space.mesh.n_cells == 0:
        raise ValueError("empty mesh")
    return assemble_stiffness(space, quad)


def assemble_b_u(w, space: FeSpace, quad=None) -> sp.csr_matrix:
    """Matrix C with ``z @ C @ v == b_u(w, v, z) = int w_j d_j v_i z_i``.

    ``w`` lives in ``space`` (the vector velocity space).
    """
    w = _check_coeff("w", w, space.ndofs)
    quad = quad or cell_quadrature(space.mesh)
    phi, grad = quad.basis(space)
    wq = quad.values(space, w)  # (nc, nq, d)
    local = np.einsum("qa,cqj,cqbj,cq->cab", phi, wq, grad, quad.dx)
    n = space.n_nodes
    return _blockdiag(_matrix(local, space.cell_dofs, space.cell_dofs, (n, n)), space.ncomp)


def convection_load(w, v, space: FeSpace, quad=None) -> np.ndarray:
    """Vector with entries b_u(w, v, phi_k) for every velocity basis function."""
    w = _check_coeff("w", w, space.ndofs)
    v = _check_coeff("v", v, space.ndofs)
    quad = quad or cell_quadrature(space.mesh)
    phi, _ = quad.basis(space)
    wq = quad.values(space, w)
    gv = quad.gradients(space, v)  # (nc, nq, i, j)
    conv = np.einsum("cqj,cqij->cqi", wq, gv)
    local = np.einsum("cqi,qa,cq->ica", conv, phi, quad.dx)
    return np.concatenate([_vector(local[i], space.cell_dofs, space.n_nodes) for i in range(space.ncomp)])


def assemble_divergence(space_u: FeSpace, space_p: FeSpace, quad=None) -> sp.csr_matrix:
    """D with ``q @ D @ u == int q div u``; shape ``(np, nu)``."""
    if space_u.mesh is not space_p.mesh:
        raise SpaceMismatch("velocity and pressure spaces live on different meshes")
    if space_u.ncomp != space_u.mesh.dim or space_p.ncomp != 1:
        raise SpaceMismatch("divergence needs a vector velocity and a scalar pressure space")
    quad = quad or cell_quadrature(space_u.mesh)
    psi, _ = quad.basis(space_p)
    _, grad = quad.basis(space_u)
    blocks = []
    for i in range(space_u.ncomp):
        local = np.einsum("qa,cqb,cq->cab", psi, grad[..., i], quad.dx)
        blocks.append(_matrix(local, space_p.cell_dofs, space_u.cell_dofs, (space_p.n_nodes, space_u.n_nodes)))
    return sp.hstack(blocks, format="csr")


def assemble_a_e(eta, space: FeSpace, quad=None) -> sp.csr_matrix:
    """a_e(eta, phi, psi) = int eta grad phi . grad psi with nodal coefficient ``eta``."""
    quad = quad or cell_quadrature(space.mesh)
    if np.isscalar(eta):
        eta = np.full(space.n_nodes, float(eta))
    eta = _check_coeff("eta", eta, space.n_nodes)
    scalar = space if space.ncomp == 1 else space.scalar()
    eq = quad.values(scalar, eta)
    _, grad = quad.basis(space)
    local = np.einsum("cqaj,cqbj,cq->cab", grad, grad, eq * quad.dx)
    n = space.n_nodes
    return _blockdiag(_matrix(local, space.cell_dofs, space.cell_dofs, (n, n)), space.ncomp)


def assemble_b_e(u, space_u: FeSpace, space_e: FeSpace, quad=None) -> sp.csr_matrix:
    """Matrix with ``psi @ B @ phi == int u . grad phi psi``."""
    if space_u.mesh is not space_e.mesh:
        raise SpaceMismatch("velocity and enthalpy spaces live on different meshes")
    u = _check_coeff("u", u, space_u.ndofs)
    quad = quad or cell_quadrature(space_e.mesh)
    phi, grad = quad.basis(space_e)
    uq = quad.values(space_u, u)
    local = np.einsum("qa,cqj,cqbj,cq->cab", phi, uq, grad, quad.dx)
    n = space_e.n_nodes
    return _matrix(local, space_e.cell_dofs, space_e.cell_dofs, (n, n))


def assemble_streamline_diffusion(u, kappa, space_u: FeSpace, space_e: FeSpace, quad=None) -> sp.csr_matrix:
    """Streamline-diffusion term ``sum_K delta_K int (u . grad phi)(u . grad psi)``.

    ``delta_K = h_K / (2 |u|_K) * max(0, 1 - 1/Pe_K)`` with the cell Peclet
    number ``Pe_K = |u|_K h_K / (2 kappa_K)``; zero on diffusion-dominated
    cells.  Off by default in the solvers.
    """
    if space_u.mesh is not space_e.mesh:
        raise SpaceMismatch("velocity and enthalpy spaces live on different meshes")
    u = _check_coeff("u", u, space_u.ndofs)
    quad = quad or cell_quadrature(space_e.mesh)
    mesh = space_e.mesh
    if np.isscalar(kappa):
        kappa = np.full(space_e.n_nodes, float(kappa))
    kappa = _check_coeff("kappa", kappa, space_e.n_nodes)
    x = mesh.points[mesh.cells]
    hk = np.max(np.linalg.norm(x[:, :, None, :] - x[:, None, :, :], axis=-1), axis=(1, 2))
    uq = quad.values(space_u, u)
    speed = np.max(np.linalg.norm(uq, axis=-1), axis=1)
    kk = np.mean(kappa[space_e.cell_dofs], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        pe = speed * hk / (2 * kk)
        delta = np.where(pe > 1, hk / (2 * speed) * (1 - 1 / pe), 0.0)
    _, grad = quad.basis(space_e)
    ug = np.einsum("cqj,cqaj->cqa", uq, grad)
    local = np.einsum("cqa,cqb,cq,c->cab", ug, ug, quad.dx, delta)
    n = space_e.n_nodes
    return _matrix(local, space_e.cell_dofs, space_e.cell_dofs, (n, n))


def assemble_gamma_mass(space: FeSpace, tag: int = WALL, degree: int = DEFAULT_DEGREE) -> sp.csr_matrix:
    """Boundary mass int_{wall} phi psi."""
    fq = facet_quadrature(space.mesh, tag, degree)
    if len(fq.facet_ids) == 0:
        raise ValueError("mesh has no wall facets")
    phi, _ = fq.basis(space)
    local = np.einsum("fqa,fqb,fq->fab", phi, phi, fq.ds)
    dofs = fq.dofs(space)
    n = space.n_nodes
    return _matrix(local, dofs, dofs, (n, n))


def boundary_load(space: FeSpace, fq: FacetQuadrature, values_q) -> np.ndarray:
    """int_facets g phi_k for quadrature-point values ``values_q (nf, nq)``."""
    phi, _ = fq.basis(space)
    local = np.einsum("fqa,fq->fa", phi, values_q * fq.ds)
    return _vector(local, fq.dofs(space), space.n_nodes)


def volume_load(space: FeSpace, quad: CellQuadrature, values_q) -> np.ndarray:
    """int f phi_k for values at quadrature points; vector spaces take ``(nc, nq, d)``."""
    phi, _ = quad.basis(space)
    if space.ncomp == 1:
        local = np.einsum("qa,cq->ca", phi, values_q * quad.dx)
        return _vector(local, space.cell_dofs, space.n_nodes)
    local = np.einsum("qa,cqi,cq->ica", phi, values_q, quad.dx)
    return np.concatenate([_vector(local[i], space.cell_dofs, space.n_nodes) for i in range(space.ncomp)])


def symmetric_gradient(grad_u):
    return 0.5 * (grad_u + np.swapaxes(grad_u, -1, -2))


def assemble_dissipation_load(u, v, space_u: FeSpace, space_e: FeSpace, quad=None) -> np.ndarray:
    """Entries d(u, v, phi_k) = int D(u):D(v) phi_k."""
    u = _check_coeff("u", u, space_u.ndofs)
    v = _check_coeff("v", v, space_u.ndofs)
    if space_u.mesh is not space_e.mesh:
        raise SpaceMismatch("velocity and enthalpy spaces live on different meshes")
    quad = quad or cell_quadrature(space_e.mesh)
    du = symmetric_gradient(quad.gradients(space_u, u))
    dv = du if v is u else symmetric_gradient(quad.gradients(space_u, v))
    return volume_load(space_e, quad, np.einsum("cqij,cqij->cq", du, dv))


def assemble_rhs_g(theta_inf, q_e, h, space: FeSpace, alpha: float = 1.0, t: float = 0.0,
                   quad=None, degree: int = DEFAULT_DEGREE) -> np.ndarray:
    """<g, phi_k> = int_wall (alpha theta_inf + q_e) phi_k + int h phi_k."""
    quad = quad or cell_quadrature(space.mesh, degree)
    fq = facet_quadrature(space.mesh, WALL, degree)
    wall = alpha * evaluate(theta_inf, fq.points, t) + evaluate(q_e, fq.points, t)
    out = boundary_load(space, fq, wall)
    out += volume_load(space, quad, evaluate(h, quad.points, t))
    return out
