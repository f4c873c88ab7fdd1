"""Implicit-Euler enthalpy step with lagged diffusivity and a nonlinear wall term.

One step solves, for the enthalpy ``e`` at the new time level,

    M (e - e_prev)/dt + A(kappa(e~)) e + B(u) e + alpha * Gamma(beta(e))
        = <g, .> + nu * d(u, u, .)

where ``Gamma(beta(e))_k = int_wall beta(e_h) phi_k``.  The diffusivity is
frozen at the lagged enthalpy; the wall term is kept implicit and handled by
damped Newton.  Cuts carry the homogeneous Neumann condition by omission.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .fem import FeSpace
from .linsolve import ConvergenceError, SolverError, fgmres, solve_spd
from .materials import EnthalpyMap
from .mesh import WALL

log = logging.getLogger(__name__)


class NewtonError(SolverError):
    pass


@dataclass
class NewtonReport:
    iterations: int
    residuals: list[float]
    damped_steps: int = 0
    converged: bool = True


@dataclass
class EnergyStepSystem:
    """Linear part ``L``, load, and the wall nonlinearity of one step."""

    L: sp.csr_matrix
    load: np.ndarray
    space: FeSpace
    material: EnthalpyMap
    wall: fem.FacetQuadrature
    symmetric: bool = False
    _phi: np.ndarray = field(init=False, repr=False)
    _dofs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._phi, _ = self.wall.basis(self.space)
        self._dofs = self.wall.dofs(self.space)

    @property
    def alpha(self) -> float:
        return self.material.law.alpha

    def boundary_term(self, e) -> np.ndarray:
        eq = self.wall.values(self.space, e)
        vals = self.alpha * self.material.inverse_enthalpy(eq)
        return fem.boundary_load(self.space, self.wall, vals)

    def residual(self, e) -> np.ndarray:
        return self.L @ e + self.boundary_term(e) - self.load

    def jacobian(self, e) -> sp.csr_matrix:
        eq = self.wall.values(self.space, e)
        slope = np.clip(self.material.beta_prime(eq), 0.0, self.material.lipschitz_bound())
        local = np.einsum("fqa,fqb,fq->fab", self._phi, self._phi, self.alpha * slope * self.wall.ds)
        n = self.space.n_nodes
        G = fem._matrix(local, self._dofs, self._dofs, (n, n))
        return (self.L + G).tocsr()


def _linear_solve(J, rhs, symmetric, tol):
    if symmetric:
        try:
            x, _ = solve_spd(J, rhs, tol=tol, max_iter=10 * J.shape[0])
            return x
        except SolverError:
            pass
    A = sp.csc_matrix(J)
    ilu = spla.spilu(A, drop_tol=1e-6, fill_factor=20)
    try:
        x, _ = fgmres(lambda v: J @ v, rhs, ilu.solve, tol=tol, max_iter=400)
    except ConvergenceError:
        # convection-dominated steps can defeat the ILU; fall back to LU
        x = spla.splu(A).solve(rhs)
        if not np.all(np.isfinite(x)):
            raise
    return x


def newton_boundary_solve(system: EnergyStepSystem, e_guess, tol=1e-10, max_iter=50, lin_tol=1e-13):
    """Damped Newton for the semilinear step system.

    Stops when ``||F(e)|| <= tol * ||load||`` (or exactly zero residual).
    Backtracking halves the step until the residual decreases.
    """
    e = np.array(e_guess, dtype=float)
    F = system.residual(e)
    scale = max(np.linalg.norm(system.load), np.linalg.norm(system.L @ e), 1e-300)
    norms = [float(np.linalg.norm(F))]
    damped = 0
    it = 0
    while norms[-1] > tol * scale:
        if it >= max_iter:
            rep = NewtonReport(it, norms, damped, False)
            raise NewtonError(f"Newton did not converge in {max_iter} iterations", rep)
        J = system.jacobian(e)
        try:
            delta = _linear_solve(J, -F, system.symmetric, lin_tol)
        except ConvergenceError as exc:
            raise NewtonError(f"linear solve inside Newton failed: {exc}", exc.report) from exc
        lam = 1.0
        while True:
            trial = e + lam * delta
            Ft = system.residual(trial)
            nt = float(np.linalg.norm(Ft))
            if nt <= (1 - 1e-4 * lam) * norms[-1] or lam < 2.0**-20:
                break
            lam *= 0.5
        if lam < 1.0:
            damped += 1
            log.debug("Newton step damped to %g (residual %.3e -> %.3e)", lam, norms[-1], nt)
        e, F = trial, Ft
        norms.append(nt)
        it += 1
    return e, NewtonReport(it, norms, damped, True)


class EnergySolver:
    def __init__(self, space_u: FeSpace, space_e: FeSpace, material: EnthalpyMap, dt: float,
                 tol: float = 1e-10, max_newton: int = 50, quad=None, supg: bool = False):
        if not dt > 0:
            raise ValueError("time step must be positive")
        self.U = space_u
        self.E = space_e
        self.material = material
        self.dt = dt
        self.tol = tol
        self.max_newton = max_newton
        self.supg = supg
        self.quad = quad or fem.cell_quadrature(space_e.mesh)
        self.M = fem.assemble_mass(space_e, self.quad)
        self.wall = fem.facet_quadrature(space_e.mesh, WALL)
        self.reports: list[NewtonReport] = []

    def load(self, u, data, t) -> np.ndarray:
        """<g(t), .> + nu d(u, u, .)."""
        law = self.material.law
        g = fem.assemble_rhs_g(data.theta_inf, data.q_e, data.h, self.E, law.alpha, t, self.quad)
        if np.any(u):
            g += law.viscosity * fem.assemble_dissipation_load(u, u, self.U, self.E, self.quad)
        return g

    def system(self, e_prev, e_tilde, u, data, t) -> EnergyStepSystem:
        kappa = self.material.kappa(np.asarray(e_tilde, dtype=float))
        L = self.M / self.dt + fem.assemble_a_e(kappa, self.E, self.quad)
        moving = bool(np.any(u))
        if moving:
            L = L + fem.assemble_b_e(u, self.U, self.E, self.quad)
            if self.supg:
                L = L + fem.assemble_streamline_diffusion(u, kappa, self.U, self.E, self.quad)
        load = self.M @ e_prev / self.dt + self.load(u, data, t)
        return EnergyStepSystem(L.tocsr(), load, self.E, self.material, self.wall, symmetric=not moving)

    def energy_step(self, e_prev, e_tilde, u, data, t):
        system = self.system(e_prev, e_tilde, u, data, t)
        e, rep = newton_boundary_solve(system, e_prev, self.tol, self.max_newton)
        self.reports.append(rep)
        return e

    def solve_transient(self, e_traj, u_traj, data, e0, nsteps: int):
        """Enthalpy trajectory from ``e0``; ``u_traj`` is the new velocity."""
        E = np.zeros((nsteps + 1, self.E.ndofs))
        E[0] = e0
        for n in range(nsteps):
            t = (n + 1) * self.dt
            E[n + 1] = self.energy_step(E[n], e_traj[n + 1], u_traj[n + 1], data, t)
        return E

    def boundary_pairing(self, e) -> float:
        """gamma(beta(e), e) = alpha int_wall beta(e_h) e_h, nonnegative for monotone beta."""
        eq = self.wall.values(self.E, e)
        return self.material.law.alpha * self.wall.integrate(self.material.inverse_enthalpy(eq) * eq)
