"""Norms and monitoring functionals over velocity/enthalpy trajectories.

Spatial norms use cell quadrature of degree ``2 * 2 + 1``; time integrals
use the trapezoid rule on the uniform grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla
from scipy.integrate import cumulative_trapezoid, trapezoid

from . import fem
from .fem import FeSpace

X_SPACE_EXPONENT = 24.0
X_GRAD_EXPONENT = 24.0 / 11.0


def _check(u):
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("non-finite field")
    return u


def _magnitude(space: FeSpace, quad, u):
    v = quad.values(space, u)
    return np.abs(v) if space.ncomp == 1 else np.linalg.norm(v, axis=-1)


def _grad_magnitude(space: FeSpace, quad, u):
    g = quad.gradients(space, u)
    return np.sqrt(np.einsum("...ij,...ij->...", g, g)) if space.ncomp > 1 else np.linalg.norm(g, axis=-1)


def lp_norm(space: FeSpace, u, p: float, quad=None) -> float:
    quad = quad or fem.cell_quadrature(space.mesh)
    mag = _magnitude(space, quad, _check(u))
    top = mag.max()
    if top == 0.0:
        return 0.0
    # scaled to avoid overflow for large exponents
    return float(top * quad.integrate((mag / top) ** p) ** (1.0 / p))


def w1p_norm(space: FeSpace, u, p: float, quad=None) -> float:
    """(int |u|^p + |grad u|^p)^(1/p) with Frobenius |grad u|."""
    quad = quad or fem.cell_quadrature(space.mesh)
    u = _check(u)
    a = _magnitude(space, quad, u)
    b = _grad_magnitude(space, quad, u)
    top = max(a.max(), b.max())
    if top == 0.0:
        return 0.0
    return float(top * quad.integrate((a / top) ** p + (b / top) ** p) ** (1.0 / p))


def l2_norm(space: FeSpace, u, quad=None) -> float:
    return lp_norm(space, u, 2.0, quad)


def h1_seminorm(space: FeSpace, u, quad=None) -> float:
    quad = quad or fem.cell_quadrature(space.mesh)
    return float(np.sqrt(quad.integrate(_grad_magnitude(space, quad, _check(u)) ** 2)))


def h1_norm(space: FeSpace, u, quad=None) -> float:
    return float(np.hypot(l2_norm(space, u, quad), h1_seminorm(space, u, quad)))


def l2_error(space: FeSpace, u, exact, t=0.0, quad=None) -> float:
    """L2 distance between a discrete field and ``exact(x, t)``."""
    quad = quad or fem.cell_quadrature(space.mesh)
    shape = () if space.ncomp == 1 else (space.ncomp,)
    diff = quad.values(space, u) - fem.evaluate(exact, quad.points, t, shape)
    sq = diff**2 if space.ncomp == 1 else np.einsum("cqi,cqi->cq", diff, diff)
    return float(np.sqrt(quad.integrate(sq)))


def time_norm(values, dt: float, p: float) -> float:
    """(int_0^T v(t)^p dt)^(1/p) by the trapezoid rule."""
    v = np.asarray(values, dtype=float)
    return float(trapezoid(v**p, dx=dt) ** (1.0 / p))


def x_norm_from_series(l24, w1, dt: float) -> float:
    """||.||_{L4(L24)} + ||.||_{L8(W^{1,24/11})} from per-step spatial norms."""
    return time_norm(l24, dt, 4.0) + time_norm(w1, dt, 8.0)


def x_norm_surrogate(U, space: FeSpace, dt: float, quad=None) -> float:
    U = np.atleast_2d(U)
    a = [lp_norm(space, u, X_SPACE_EXPONENT, quad) for u in U]
    b = [w1p_norm(space, u, X_GRAD_EXPONENT, quad) for u in U]
    return x_norm_from_series(a, b, dt)


def l2l2_norm_of_datum(mesh, f, times, shape=(), quad=None) -> float:
    """||f||_{L2(I;L2)} for a datum ``f(x, t)`` sampled on ``times``."""
    quad = quad or fem.cell_quadrature(mesh)
    sq = []
    for t in times:
        v = fem.evaluate(f, quad.points, t, shape)
        sq.append(quad.integrate(v**2 if not shape else np.einsum("cqi,cqi->cq", v, v)))
    if len(times) == 1:
        return float(np.sqrt(sq[0]))
    return float(np.sqrt(trapezoid(sq, x=times)))


# ----------------------------------------------------------------------
# boundary functionals


def cut_fluxes(u, space: FeSpace, degree: int = 7) -> dict[int, float]:
    """Volumetric flux int_{cut i} u . n_i per cut (positive = outflow)."""
    fq = fem.facet_quadrature(space.mesh, "cuts", degree)
    un = np.einsum("fqi,fi->fq", fq.values(space, _check(u)), fq.normals)
    tags = space.mesh.facet_tags[fq.facet_ids]
    return {i: float(np.einsum("fq,fq->", un[tags == i], fq.ds[tags == i])) for i in space.mesh.cut_ids}


def backflow_energy(u, space: FeSpace, degree: int = 7) -> dict[int, float]:
    """Kinetic energy carried in through each cut: |1/2 int (u.n)_- |u|^2|."""
    fq = fem.facet_quadrature(space.mesh, "cuts", degree)
    v = fq.values(space, _check(u))
    un = np.einsum("fqi,fi->fq", v, fq.normals)
    dens = 0.5 * np.minimum(un, 0.0) * np.einsum("fqi,fqi->fq", v, v)
    tags = space.mesh.facet_tags[fq.facet_ids]
    return {i: abs(float(np.einsum("fq,fq->", dens[tags == i], fq.ds[tags == i]))) for i in space.mesh.cut_ids}


def boundary_convection_term(w, space_w: FeSpace, v, space_v: FeSpace, degree: int = 7) -> float:
    """1/2 int_cuts (w.n) |v|^2; ``v`` may be vector- or scalar-valued.

    For w vanishing on the walls this is what b(w, v, v) reduces to when
    div w = 0.
    """
    fq = fem.facet_quadrature(space_w.mesh, "cuts", degree)
    wn = np.einsum("fqi,fi->fq", fq.values(space_w, w), fq.normals)
    vq = fq.values(space_v, v)
    sq = vq**2 if space_v.ncomp == 1 else np.einsum("fqi,fqi->fq", vq, vq)
    return 0.5 * fq.integrate(wn * sq)


@dataclass
class EnergyBudget:
    kinetic: np.ndarray
    dissipation: np.ndarray
    fluxes: dict[int, np.ndarray]


def energy_budget(U, space: FeSpace, quad=None) -> EnergyBudget:
    U = np.atleast_2d(U)
    ke = np.array([0.5 * l2_norm(space, u, quad) ** 2 for u in U])
    dis = np.array([h1_seminorm(space, u, quad) ** 2 for u in U])
    per = [cut_fluxes(u, space) for u in U]
    fluxes = {i: np.array([p[i] for p in per]) for i in space.mesh.cut_ids}
    return EnergyBudget(ke, dis, fluxes)


# ----------------------------------------------------------------------
# a priori bound for the enthalpy


def dual_norm(load, space: FeSpace, quad=None) -> float:
    """H1-Riesz norm of a functional given by its load vector."""
    load = np.asarray(load, dtype=float)
    if not np.any(load):
        return 0.0
    quad = quad or fem.cell_quadrature(space.mesh)
    G = (fem.assemble_mass(space, quad) + fem.assemble_stiffness(space, quad)).tocsc()
    r = spla.splu(G).solve(load)
    return float(np.sqrt(max(load @ r, 0.0)))


@dataclass
class GronwallResult:
    bound: np.ndarray
    energy: np.ndarray
    satisfied: bool


def gronwall_bound(E, U, G, e0, space_u: FeSpace, space_e: FeSpace, dt: float,
                   c1: float = 1.0, c2: float = 1.0, c3: float = 1.0, quad=None) -> GronwallResult:
    """Evaluate the enthalpy a priori bound on the time grid.

    bound(t) = exp(int_0^t c2 ||u||_{L4}^8 + c3) *
               [ ||e0||^2 + int_0^t c1 (||g||_{-1} + ||u||_{W^{1,12/5}}^2)^2 ]

    ``G`` holds the load vector of ``<g(t), .>`` for each time level.
    """
    E = np.atleast_2d(E)
    U = np.atleast_2d(U)
    quad = quad or fem.cell_quadrature(space_e.mesh)
    energy = np.array([l2_norm(space_e, e, quad) ** 2 for e in E])
    l4 = np.array([lp_norm(space_u, u, 4.0, quad) for u in U])
    w = np.array([w1p_norm(space_u, u, 12.0 / 5.0, quad) for u in U])
    gn = np.array([dual_norm(g, space_e, quad) for g in G])
    growth = cumulative_trapezoid(c2 * l4**8 + c3, dx=dt, initial=0.0)
    source = cumulative_trapezoid(c1 * (gn + w**2) ** 2, dx=dt, initial=0.0)
    bound = np.exp(growth) * (l2_norm(space_e, e0, quad) ** 2 + source)
    return GronwallResult(bound, energy, bool(np.all(energy <= bound)))
