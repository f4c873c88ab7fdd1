"""Implicit-Euler momentum/mass step with do-nothing cuts.

Each step solves

    (M/dt + nu K) u - D^T P = M u_prev / dt + load,    -D u = 0,

with ``K`` the full-gradient stiffness and ``D`` the divergence pairing.
Velocity degrees of freedom on the closed wall are eliminated (u = 0).
Nothing is assembled on the cuts: the traction ``-P n + nu du/dn`` vanishes
there as the natural condition of the gradient-form weak statement.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import FeSpace
from .linsolve import SaddlePreconditioner, SolverError, solve_saddle
from .materials import EnthalpyMap
from .mesh import PipeMesh

log = logging.getLogger(__name__)


def taylor_hood(mesh: PipeMesh) -> tuple[FeSpace, FeSpace]:
    return FeSpace(mesh, 2, mesh.dim, dirichlet=True), FeSpace(mesh, 1)


class MomentumSolver:
    """Factorises the step operator once; ``dt = inf`` gives steady Stokes."""

    def __init__(self, mesh: PipeMesh, dt: float, nu: float = 1.0, space_u=None, space_p=None,
                 tol: float = 1e-10, max_iter: int = 500, method: str = "fgmres", quad=None):
        if not dt > 0:
            raise ValueError("time step must be positive")
        self.mesh = mesh
        self.dt = dt
        self.nu = nu
        self.tol = tol
        self.max_iter = max_iter
        self.method = method
        if space_u is None or space_p is None:
            space_u, space_p = taylor_hood(mesh)
        self.V, self.Q = space_u, space_p
        self.quad = quad or fem.cell_quadrature(mesh)
        self.M = fem.assemble_mass(self.V, self.quad)
        self.K = fem.assemble_a_u(self.V, self.quad)
        self.D = fem.assemble_divergence(self.V, self.Q, self.quad)
        self.Mp = fem.assemble_mass(self.Q, self.quad)
        inv_dt = 0.0 if np.isinf(dt) else 1.0 / dt
        free = self.V.free_dofs
        self.free = free
        op = (inv_dt * self.M + nu * self.K).tocsr()
        self.A = op[free][:, free]
        self.B = (-self.D[:, free]).tocsr()
        self.Bt = self.B.T.tocsr()
        self._precond = None
        if method != "direct":
            self._precond = SaddlePreconditioner(
                self.A, self.Bt, self.B, self.Mp, nu=nu, inv_dt=inv_dt,
                mass_u_diag=self.M.diagonal()[free],
            )
        self.inv_dt = inv_dt

    # ------------------------------------------------------------------
    def momentum_rhs(self, e_tilde, u_tilde, f, t: float, space_e: FeSpace, material: EnthalpyMap):
        """Load (rho(e~) f, v) - b_u(u~, u~, v) for every velocity test function."""
        e_tilde = np.asarray(e_tilde, dtype=float)
        u_tilde = np.asarray(u_tilde, dtype=float)
        if not (np.all(np.isfinite(e_tilde)) and np.all(np.isfinite(u_tilde))):
            raise ValueError("non-finite field in momentum right-hand side")
        rho_nodal = material.density_of_enthalpy(e_tilde)
        rho_q = self.quad.values(space_e, rho_nodal)
        fq = fem.evaluate(f, self.quad.points, t, (self.mesh.dim,))
        load = fem.volume_load(self.V, self.quad, rho_q[..., None] * fq)
        if np.any(u_tilde):
            load -= fem.convection_load(u_tilde, u_tilde, self.V, self.quad)
        return load

    def stokes_step(self, u_prev, load):
        """One implicit step; returns ``(u, P, report)``."""
        rhs = self.inv_dt * (self.M @ u_prev) + load
        f = rhs[self.free]
        g = np.zeros(self.Q.ndofs)
        try:
            uf, p, rep = solve_saddle(self.A, self.Bt, self.B, f, g, self.tol, self.max_iter,
                                      precond=self._precond, method=self.method)
        except SolverError as exc:
            raise SolverError(f"momentum step failed: {exc}", exc.report) from exc
        u = np.zeros(self.V.ndofs)
        u[self.free] = uf
        return u, p, rep

    def solve_transient(self, e_traj, u_traj, f, u0, nsteps: int, space_e, material):
        """Trajectory of momentum steps with lagged convection and buoyancy.

        ``e_traj``/``u_traj`` hold the lagged fields on the time grid
        ``t_n = n dt``; slot 0 of the result is ``u0`` and pressure slot 0 is
        left at zero.
        """
        U = np.zeros((nsteps + 1, self.V.ndofs))
        P = np.zeros((nsteps + 1, self.Q.ndofs))
        U[0] = u0
        iters = []
        for n in range(nsteps):
            t = (n + 1) * self.dt
            load = self.momentum_rhs(e_traj[n + 1], u_traj[n + 1], f, t, space_e, material)
            U[n + 1], P[n + 1], rep = self.stokes_step(U[n], load)
            iters.append(rep.iterations)
        log.debug("momentum trajectory: saddle iterations %s", iters)
        return U, P

    def divergence_residual(self, u) -> float:
        return float(np.linalg.norm(self.D @ u))


def do_nothing_residual(u, p, space_u: FeSpace, space_p: FeSpace, nu: float = 1.0, degree=fem.DEFAULT_DEGREE):
    """L2(cuts) norm of the traction ``-P n + nu du/dn`` evaluated facet-wise."""
    fq = fem.facet_quadrature(space_u.mesh, "cuts", degree)
    grad = fq.gradients(space_u, u)  # (nf, nq, i, j)
    dudn = np.einsum("fqij,fj->fqi", grad, fq.normals)
    pq = fq.values(space_p, p)
    trac = -pq[..., None] * fq.normals[:, None, :] + nu * dudn
    return float(np.sqrt(fq.integrate(np.einsum("fqi,fqi->fq", trac, trac))))


def steady_stokes(mesh: PipeMesh, f, nu: float = 1.0, **kwargs):
    """Steady Stokes solve; returns ``(u, P, solver)``."""
    solver = MomentumSolver(mesh, np.inf, nu, **kwargs)
    fq = fem.evaluate(f, solver.quad.points, 0.0, (mesh.dim,))
    load = fem.volume_load(solver.V, solver.quad, fq)
    u, p, _ = solver.stokes_step(np.zeros(solver.V.ndofs), load)
    return u, p, solver


def h1_gram(space: FeSpace, quad=None) -> sp.csr_matrix:
    quad = quad or fem.cell_quadrature(space.mesh)
    return (fem.assemble_mass(space, quad) + fem.assemble_stiffness(space, quad)).tocsr()
