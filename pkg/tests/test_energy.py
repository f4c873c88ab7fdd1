from types import SimpleNamespace

import numpy as np
import pytest
import scipy.sparse as sp

from pipeflow import diagnostics as diag
from pipeflow import fem
from pipeflow.energy import EnergySolver, NewtonError, newton_boundary_solve
from pipeflow.fem import FeSpace
from pipeflow.materials import material_from_table
from pipeflow.stokes import taylor_hood

from conftest import poiseuille

ZERO = SimpleNamespace(h=0.0, theta_inf=0.0, q_e=0.0)


@pytest.fixture(scope="module")
def spaces(channel_coarse):
    V, _ = taylor_hood(channel_coarse)
    return V, FeSpace(channel_coarse, 1)


def test_zero_data_zero_step(spaces, piecewise_law):
    V, E = spaces
    es = EnergySolver(V, E, piecewise_law, 0.1)
    e = es.energy_step(np.zeros(E.ndofs), np.zeros(E.ndofs), np.zeros(V.ndofs), ZERO, 0.1)
    assert not e.any()


def test_constant_balance(spaces, unit_law):
    V, E = spaces
    es = EnergySolver(V, E, unit_law, 0.1)
    c = 2.5
    data = SimpleNamespace(h=0.0, theta_inf=c, q_e=0.0)
    E0 = np.full(E.ndofs, c)
    traj = es.solve_transient(np.tile(E0, (5, 1)), np.zeros((5, V.ndofs)), data, E0, 4)
    assert np.abs(traj - c).max() <= 1e-12


def test_dissipation_heating_positive(spaces, unit_law):
    V, E = spaces
    es = EnergySolver(V, E, unit_law, 0.1)
    u = V.interpolate(poiseuille)
    load = es.load(u, ZERO, 0.1)
    assert load.min() >= 0.0 and load.sum() > 0
    e = es.energy_step(np.zeros(E.ndofs), np.zeros(E.ndofs), u, ZERO, 0.1)
    assert e.min() > 0


def test_linear_beta_one_newton_step(spaces, unit_law):
    V, E = spaces
    es = EnergySolver(V, E, unit_law, 0.1)
    data = SimpleNamespace(h=1.0, theta_inf=0.3, q_e=0.1)
    es.energy_step(np.zeros(E.ndofs), np.zeros(E.ndofs), V.interpolate(poiseuille), data, 0.1)
    assert es.reports[-1].iterations == 1


def _chord_oracle(system, e, tol=1e-13, max_iter=500):
    """Lagged-chord iteration: beta(e) ~ (beta(e_k)/e_k) e on the wall, dense solves."""
    fq, space = system.wall, system.space
    phi, _ = fq.basis(space)
    dofs = fq.dofs(space)
    mat = system.material
    L = system.L.toarray()
    for _ in range(max_iter):
        eq = fq.values(space, e)
        safe = np.where(np.abs(eq) > 1e-300, eq, 1.0)
        slope = np.where(np.abs(eq) > 1e-300, mat.inverse_enthalpy(eq) / safe, mat.beta_prime(0.0))
        local = np.einsum("fqa,fqb,fq->fab", phi, phi, system.alpha * slope * fq.ds)
        r = np.broadcast_to(dofs[:, :, None], local.shape).ravel()
        c = np.broadcast_to(dofs[:, None, :], local.shape).ravel()
        G = sp.coo_matrix((local.ravel(), (r, c)), shape=L.shape).toarray()
        new = np.linalg.solve(L + G, system.load)
        if np.abs(new - e).max() <= tol * max(1.0, np.abs(new).max()):
            return new
        e = new
    raise AssertionError("oracle did not converge")


def test_newton_matches_chord_oracle(spaces):
    V, E = spaces
    law = material_from_table([(0.0, 2.0), (1.0, 1.0)], alpha=20.0)
    es = EnergySolver(V, E, law, 0.5)
    data = SimpleNamespace(h=0.0, theta_inf=lambda x, t: 1.5 + np.sin(x[..., 0]), q_e=0.0)
    system = es.system(np.zeros(E.ndofs), np.zeros(E.ndofs), np.zeros(V.ndofs), data, 0.5)
    e, rep = newton_boundary_solve(system, np.zeros(E.ndofs), tol=1e-13)
    ref = _chord_oracle(system, np.zeros(E.ndofs))
    assert np.abs(e - ref).max() <= 1e-9


def test_far_guess_damped_and_converges(spaces):
    V, E = spaces
    law = material_from_table([(0.0, 100.0), (1.0, 1.0)], alpha=50.0)
    es = EnergySolver(V, E, law, 1.0)
    data = SimpleNamespace(h=0.0, theta_inf=5.0, q_e=0.0)
    system = es.system(np.zeros(E.ndofs), np.zeros(E.ndofs), np.zeros(V.ndofs), data, 1.0)
    e, rep = newton_boundary_solve(system, np.full(E.ndofs, -1e4))
    assert rep.converged and rep.damped_steps > 0
    assert all(b < a for a, b in zip(rep.residuals[:-1], rep.residuals[1:]))
    assert np.linalg.norm(system.residual(e)) <= 1e-10 * np.linalg.norm(system.load)


def test_newton_iteration_cap(spaces):
    V, E = spaces
    law = material_from_table([(0.0, 100.0), (1.0, 1.0)], alpha=50.0)
    es = EnergySolver(V, E, law, 1.0)
    data = SimpleNamespace(h=0.0, theta_inf=5.0, q_e=0.0)
    system = es.system(np.zeros(E.ndofs), np.zeros(E.ndofs), np.zeros(V.ndofs), data, 1.0)
    with pytest.raises(NewtonError) as info:
        newton_boundary_solve(system, np.full(E.ndofs, -1e4), max_iter=2)
    assert len(info.value.report.residuals) == 3


def test_energy_decay_and_wall_sign(spaces, piecewise_law):
    V, E = spaces
    es = EnergySolver(V, E, piecewise_law, 0.1)
    rng = np.random.default_rng(5)
    e0 = rng.uniform(-20, 40, E.ndofs)
    n = 6
    traj = es.solve_transient(np.tile(e0, (n + 1, 1)), np.zeros((n + 1, V.ndofs)), ZERO, e0, n)
    norms = [diag.l2_norm(E, e) for e in traj]
    assert all(b <= a for a, b in zip(norms[:-1], norms[1:]))
    assert min(es.boundary_pairing(e) for e in traj) >= -1e-12


def test_kappa_freeze(spaces, piecewise_law):
    V, E = spaces
    es = EnergySolver(V, E, piecewise_law, 0.1)
    et = np.linspace(20.0, 40.0, E.ndofs)  # above E(10) = 15, kappa constant there
    A = es.system(np.zeros(E.ndofs), et, np.zeros(V.ndofs), ZERO, 0.1).L
    B = es.system(np.zeros(E.ndofs), et + 5.0, np.zeros(V.ndofs), ZERO, 0.1).L
    assert np.array_equal(A.data, B.data) and np.array_equal(A.indices, B.indices)


def test_transport_uses_given_velocity(spaces, unit_law):
    V, E = spaces
    es = EnergySolver(V, E, unit_law, 0.1)
    u = V.interpolate(poiseuille)
    L0 = es.system(np.zeros(E.ndofs), np.zeros(E.ndofs), np.zeros(V.ndofs), ZERO, 0.1).L
    L1 = es.system(np.zeros(E.ndofs), np.zeros(E.ndofs), u, ZERO, 0.1).L
    diff = (L1 - L0).toarray()
    np.testing.assert_allclose(diff, fem.assemble_b_e(u, V, E).toarray(), atol=1e-14)


def test_rejects_nonpositive_dt(spaces, unit_law):
    V, E = spaces
    with pytest.raises(ValueError):
        EnergySolver(V, E, unit_law, 0.0)
