"""The decoupled solution map and the outer fixed-point loop.

Given lagged trajectories ``(u~, e~)`` the map returns ``(u, e)`` where ``u``
solves the momentum problem with buoyancy ``rho(e~) f`` and convection
``b_u(u~, u~, .)`` moved to the right-hand side, and ``e`` solves the
enthalpy problem with diffusivity ``kappa(e~)``, transport by the new ``u``
and dissipation ``d(u, u, .)``.  A fixed point is an implicit-Euler solution
of the coupled system.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import diagnostics, fem
from .energy import EnergySolver
from .fem import FeSpace
from .linsolve import SolverError
from .materials import EnthalpyMap, material_from_table
from .mesh import PipeMesh
from .stokes import MomentumSolver, taylor_hood

log = logging.getLogger(__name__)


@dataclass
class ScenarioData:
    """Problem data; fields are constants or callables ``fn(x, t)``."""

    mesh: PipeMesh
    material: EnthalpyMap
    T: float
    dt: float
    f: Any = 0.0
    h: Any = 0.0
    theta_inf: Any = 0.0
    q_e: Any = 0.0
    u0: Any = 0.0
    e0: Any = 0.0

    def __post_init__(self):
        if not (self.T > 0 and self.dt > 0):
            raise ValueError("T and dt must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"T/dt = {n} is not an integer")

    @property
    def nsteps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nsteps + 1)


class CoupledProblem:
    """Spaces, subsystem solvers and discrete data for one scenario."""

    def __init__(self, data: ScenarioData, enthalpy_degree: int = 1, linear_tol: float = 1e-10,
                 newton_tol: float = 1e-10, saddle_method: str = "fgmres", supg: bool = False):
        self.data = data
        mesh = data.mesh
        self.V, self.Q = taylor_hood(mesh)
        self.E = FeSpace(mesh, enthalpy_degree)
        self.quad = fem.cell_quadrature(mesh)
        law = data.material.law
        self.momentum = MomentumSolver(mesh, data.dt, law.viscosity, self.V, self.Q, tol=linear_tol,
                                       method=saddle_method, quad=self.quad)
        self.energy = EnergySolver(self.V, self.E, data.material, data.dt, tol=newton_tol, quad=self.quad,
                                   supg=supg)
        self.u0 = self.V.interpolate(data.u0)
        wall_vals = self.u0[self.V.dirichlet_mask]
        if wall_vals.size and np.abs(wall_vals).max() > 1e-10 * max(1.0, np.abs(self.u0).max()):
            raise ValueError("initial velocity does not vanish on the walls")
        self.u0[self.V.dirichlet_mask] = 0.0
        self.e0 = self.E.interpolate(data.e0)
        self._h1 = (self.momentum.M + self.momentum.K).tocsr()
        self._l2e = self.energy.M

    @property
    def nsteps(self) -> int:
        return self.data.nsteps

    def initial_iterate(self):
        n = self.nsteps + 1
        return np.tile(self.u0, (n, 1)), np.tile(self.e0, (n, 1))

    def apply_T(self, u_tilde, e_tilde):
        """One application of the map; returns ``(U, P, E)`` trajectories."""
        d = self.data
        U, P = self.momentum.solve_transient(e_tilde, u_tilde, d.f, self.u0, self.nsteps, self.E, d.material)
        E = self.energy.solve_transient(e_tilde, U, d, self.e0, self.nsteps)
        return U, P, E

    def increment(self, U1, E1, U0, E0) -> float:
        """max_n ||u1 - u0||_H1 + ||e1 - e0||_L2 over the time grid."""
        du = U1 - U0
        de = E1 - E0
        hu = np.sqrt(np.maximum(np.einsum("ni,ni->n", du, (self._h1 @ du.T).T), 0.0))
        le = np.sqrt(np.maximum(np.einsum("ni,ni->n", de, (self._l2e @ de.T).T), 0.0))
        return float(np.max(hu + le))

    def g_loads(self, U=None):
        """Load vectors of <g(t), .> on the time grid."""
        law = self.data.material.law
        d = self.data
        return np.array([
            fem.assemble_rhs_g(d.theta_inf, d.q_e, d.h, self.E, law.alpha, t, self.quad)
            for t in d.times
        ])


@dataclass
class PicardResult:
    U: np.ndarray
    P: np.ndarray
    E: np.ndarray
    increments: list[float]
    relative: list[float]
    x_norms: list[float]
    converged: bool
    non_contracting: bool
    iterations: int = field(init=False)

    def __post_init__(self):
        self.iterations = len(self.increments)

    @property
    def ratios(self) -> list[float]:
        inc = self.increments
        return [inc[k] / inc[k - 1] if inc[k - 1] > 0 else 0.0 for k in range(1, len(inc))]


class PicardError(RuntimeError):
    def __init__(self, message, result: PicardResult):
        super().__init__(message)
        self.result = result


def _non_contracting(increments, window=3) -> bool:
    tail = increments[-(window + 1):]
    if len(tail) < 2:
        return False
    return all(b >= a for a, b in zip(tail[:-1], tail[1:]))


def picard_solve(problem: CoupledProblem, tol: float = 1e-6, max_outer: int = 30,
                 relaxation: float = 1.0, track_x_norm: bool = True) -> PicardResult:
    """Iterate the solution map from the time-extended initial data.

    Converged when the increment relative to the first one is at most
    ``tol`` (a zero first increment means the start is already a fixed
    point).  Raises :class:`PicardError` after ``max_outer`` iterations or
    when a subsystem solve fails; the attached result carries the last
    iterate and the increment history.
    """
    if not 0 < relaxation <= 1:
        raise ValueError("relaxation factor must lie in (0, 1]")
    U, E = problem.initial_iterate()
    P = np.zeros((problem.nsteps + 1, problem.Q.ndofs))
    incs, rel, xs = [], [], []
    converged = False
    for k in range(1, max_outer + 1):
        try:
            Un, Pn, En = problem.apply_T(U, E)
        except SolverError as exc:
            result = PicardResult(U, P, E, incs, rel, xs, False, _non_contracting(incs))
            raise PicardError(f"subsystem solve failed in iteration {k}: {exc}", result) from exc
        if relaxation < 1:
            Un = relaxation * Un + (1 - relaxation) * U
            En = relaxation * En + (1 - relaxation) * E
        inc = problem.increment(Un, En, U, E)
        U, P, E = Un, Pn, En
        incs.append(inc)
        rel.append(inc / incs[0] if incs[0] > 0 else 0.0)
        if track_x_norm:
            xs.append(diagnostics.x_norm_surrogate(U, problem.V, problem.data.dt, problem.quad))
        log.info("picard %d: increment %.6e (relative %.3e)", k, inc, rel[-1])
        if incs[0] == 0.0 or rel[-1] <= tol:
            converged = True
            break
    result = PicardResult(U, P, E, incs, rel, xs, converged, _non_contracting(incs))
    if not converged:
        raise PicardError(
            f"fixed-point iteration did not reach {tol:g} in {max_outer} iterations"
            + (" (non-contracting)" if result.non_contracting else ""),
            result,
        )
    return result


# ----------------------------------------------------------------------
# smallness condition and the Stokes constant


@dataclass
class SmallnessCheck:
    passed: bool
    margin: float
    threshold: float
    data_size: float


def check_smallness(f_norm: float, u0_norm: float, T: float, C_S: float, rho_max: float) -> SmallnessCheck:
    """Test 1 / (4 C_S^2 T^(1/8)) >= rho_2 ||f|| + ||u0||; margin is their difference."""
    threshold = 1.0 / (4.0 * C_S**2 * T ** 0.125)
    size = rho_max * f_norm + u0_norm
    return SmallnessCheck(threshold >= size, threshold - size, threshold, size)


def ball_radius(C_S: float, T: float) -> float:
    return 1.0 / (2.0 * C_S * T ** 0.125)


@dataclass
class CSEstimate:
    """Largest observed ratio ||u||_X / (||f|| + ||u0||_H1): a lower bound on C_S."""

    value: float
    ratios: list[float]
    skipped: int
    mesh: str
    lower_bound: bool = True


def _random_force(rng, mesh: PipeMesh, T: float, modes: int = 3):
    lo = mesh.points.min(axis=0)
    span = np.ptp(mesh.points, axis=0)
    d = mesh.dim
    waves = rng.integers(0, 3, size=(modes, d))
    phase = rng.uniform(0, 2 * np.pi, size=(modes, d))
    amp = rng.normal(size=(modes, d))
    slope = rng.normal(size=d)

    def f(x, t):
        s = (x - lo) / span
        out = np.zeros(x.shape[:-1] + (d,))
        for k in range(modes):
            arg = np.pi * (s @ waves[k])
            out += amp[k] * np.cos(arg[..., None] + phase[k])
        return out * (1.0 + (t / T) * slope)

    return f


def estimate_cs(mesh: PipeMesh, dt: float, T: float, samples: int | Sequence = 32, seed: int = 0,
                linear_tol: float = 1e-10) -> CSEstimate:
    """Sample the Stokes solution operator (unit viscosity) on random data.

    ``samples`` is a count of random ``(f, u0)`` pairs or an explicit
    sequence of pairs.  Pairs with zero data are skipped.
    """
    nsteps = int(round(T / dt))
    if abs(nsteps * dt - T) > 1e-9 * T:
        raise ValueError("T/dt must be an integer")
    solver = MomentumSolver(mesh, dt, 1.0, tol=linear_tol)
    steady = MomentumSolver(mesh, np.inf, 1.0, solver.V, solver.Q, tol=linear_tol)
    V = solver.V
    E = FeSpace(mesh, 1)
    unit = material_from_table([(0.0, 1.0)])
    times = dt * np.arange(nsteps + 1)
    rng = np.random.default_rng(seed)
    if isinstance(samples, (int, np.integer)):
        pairs = []
        for _ in range(int(samples)):
            f = _random_force(rng, mesh, T)
            if rng.random() < 0.5:
                g = _random_force(rng, mesh, T)
                u0, _, _ = steady.stokes_step(np.zeros(V.ndofs), fem.volume_load(
                    V, solver.quad, fem.evaluate(g, solver.quad.points, 0.0, (mesh.dim,))))
            else:
                u0 = np.zeros(V.ndofs)
            pairs.append((f, u0))
    else:
        pairs = list(samples)
    zeros_e = np.zeros((nsteps + 1, E.ndofs))
    zeros_u = np.zeros((nsteps + 1, V.ndofs))
    ratios, skipped = [], 0
    for f, u0 in pairs:
        u0 = V.interpolate(u0) if callable(u0) or np.ndim(u0) == 0 else np.asarray(u0, dtype=float)
        u0 = np.where(V.dirichlet_mask, 0.0, u0)
        fn = diagnostics.l2l2_norm_of_datum(mesh, f, times, (mesh.dim,), solver.quad)
        un = diagnostics.h1_norm(V, u0, solver.quad)
        if fn + un == 0.0:
            skipped += 1
            continue
        U, _ = solver.solve_transient(zeros_e, zeros_u, f, u0, nsteps, E, unit)
        ratios.append(diagnostics.x_norm_surrogate(U, V, dt, solver.quad) / (fn + un))
    if not ratios:
        raise ValueError("no admissible (nonzero) samples for the constant estimate")
    return CSEstimate(float(max(ratios)), ratios, skipped, mesh.name)
