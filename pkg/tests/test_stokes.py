import numpy as np
import pytest

from pipeflow import diagnostics as diag
from pipeflow import fem
from pipeflow.fem import FeSpace
from pipeflow.mesh import channel_spec, generate_pipe, unit_square_mesh
from pipeflow.stokes import MomentumSolver, do_nothing_residual, steady_stokes

import manufactured
from conftest import poiseuille


def test_manufactured_field_is_divergence_free():
    assert manufactured.solution()["div"] == 0


def test_momentum_rhs_zero(square4, piecewise_law):
    s = MomentumSolver(square4, 0.1)
    E = FeSpace(square4, 1)
    load = s.momentum_rhs(np.linspace(-5, 30, E.ndofs), np.zeros(s.V.ndofs), 0.0, 0.0, E, piecewise_law)
    assert not load.any()


def test_momentum_rhs_constant_force(channel_coarse, unit_law):
    s = MomentumSolver(channel_coarse, 0.1)
    E = FeSpace(channel_coarse, 1)
    load = s.momentum_rhs(np.zeros(E.ndofs), np.zeros(s.V.ndofs), [1.0, 0.0], 0.0, E, unit_law)
    ex, ey = s.V.interpolate([1.0, 0.0]), s.V.interpolate([0.0, 1.0])
    assert load @ ex == pytest.approx(8.0, abs=1e-12)
    assert load @ ey == pytest.approx(0.0, abs=1e-12)


def test_momentum_rhs_convection_quadrature(square4, unit_law):
    s = MomentumSolver(square4, 0.1)
    E = FeSpace(square4, 1)
    ut = s.V.interpolate(lambda p, t: np.stack([p[..., 0], 0 * p[..., 0]], -1))
    load = s.momentum_rhs(np.zeros(E.ndofs), ut, 0.0, 0.0, E, unit_law)
    # (u.grad)u = (x, 0); int_square x = 1/2
    assert load @ s.V.interpolate([1.0, 0.0]) == pytest.approx(-0.5, abs=1e-13)


def test_momentum_rhs_rejects_nonfinite(square4, unit_law):
    s = MomentumSolver(square4, 0.1)
    E = FeSpace(square4, 1)
    bad = np.zeros(E.ndofs)
    bad[0] = np.inf
    with pytest.raises(ValueError):
        s.momentum_rhs(bad, np.zeros(s.V.ndofs), 0.0, 0.0, E, unit_law)


def test_zero_step(channel_coarse):
    s = MomentumSolver(channel_coarse, 0.1)
    u, p, _ = s.stokes_step(np.zeros(s.V.ndofs), np.zeros(s.V.ndofs))
    assert not u.any() and not p.any()


@pytest.mark.parametrize("method", ["fgmres", "direct"])
def test_steady_poiseuille(channel_coarse, method):
    u, p, s = steady_stokes(channel_coarse, [2.0, 0.0], method=method)
    assert diag.l2_error(s.V, u, poiseuille) <= 1e-8
    assert np.abs(p).max() <= 1e-8
    assert do_nothing_residual(u, p, s.V, s.Q) <= 1e-8


def test_transient_poiseuille_stationary(channel_coarse, unit_law):
    s = MomentumSolver(channel_coarse, 0.2)
    E = FeSpace(channel_coarse, 1)
    u0 = s.V.interpolate(poiseuille)
    n = 4
    U, P = s.solve_transient(np.zeros((n + 1, E.ndofs)), np.tile(u0, (n + 1, 1)), [2.0, 0.0], u0, n, E, unit_law)
    assert np.abs(U - u0).max() <= 1e-9
    assert np.abs(P[1:]).max() <= 1e-8


def test_transient_zero(channel_coarse, unit_law):
    s = MomentumSolver(channel_coarse, 0.2)
    E = FeSpace(channel_coarse, 1)
    U, P = s.solve_transient(np.zeros((4, E.ndofs)), np.zeros((4, s.V.ndofs)), 0.0, np.zeros(s.V.ndofs), 3, E, unit_law)
    assert not U.any() and not P.any()


def test_decay_and_invariants(channel_coarse, unit_law):
    u, _, _ = steady_stokes(channel_coarse, lambda x, t: np.stack([np.sin(x[..., 0]), np.cos(x[..., 1])], -1))
    s = MomentumSolver(channel_coarse, 0.05, tol=1e-11)
    E = FeSpace(channel_coarse, 1)
    n = 6
    U, _ = s.solve_transient(np.zeros((n + 1, E.ndofs)), np.zeros((n + 1, s.V.ndofs)), 0.0, u, n, E, unit_law)
    norms = [diag.l2_norm(s.V, v) for v in U]
    assert all(b < a for a, b in zip(norms[:-1], norms[1:]))
    for v in U[1:]:
        assert np.all(v[s.V.dirichlet_mask] == 0.0)
        assert s.divergence_residual(v) <= 1e-9 * max(1.0, np.abs(v).max())


def test_do_nothing_residual_converges():
    sol = manufactured.solution(s=1, convection=False, steady=True)
    res = []
    for n in (4, 8, 16):
        m = unit_square_mesh(n)
        u, p, s = steady_stokes(m, sol["f"])
        res.append(do_nothing_residual(u, p, s.V, s.Q))
    rates = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(rates >= 1.0), (res, rates)


def test_steady_stokes_inf_dt_rejected_zero():
    with pytest.raises(ValueError):
        MomentumSolver(generate_pipe(channel_spec(h=0.5)), 0.0)
