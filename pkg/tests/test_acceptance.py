"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a single ``PASS``/``FAIL`` line for its criterion.
"""
import json
import time
from math import factorial

import numpy as np
import pytest
import sympy as S

import manufactured as mms
from pipeflow import diagnostics as diag
from pipeflow import fem
from pipeflow.config import parse_config_text
from pipeflow.coupler import CoupledProblem, ScenarioData, picard_solve
from pipeflow.fem import FeSpace
from pipeflow.materials import material_from_table
from pipeflow.mesh import channel_spec, generate_pipe, unit_square_mesh
from pipeflow.quadrature import simplex_rule
from pipeflow.run import run_scenario
from pipeflow.stokes import MomentumSolver, steady_stokes, taylor_hood

from conftest import cube_mesh, poiseuille, single_triangle

HEATED_CHANNEL = """
[mesh]
generator = channel
length = 4
half_width = 1
h = 0.15

[material]
density = 0:1.2, 1:1
alpha = 1

[scenario]
T = 1
dt = 0.1
f = 0.02, -0.05
theta_inf = 0.5
h = exp(-(x-1)^2)*(1-y^2)
e0 = 0.5

[solver]
cs_samples = 8

[output]
vtk = false
seed = 7
"""

ZERO_DATA = """
[mesh]
generator = channel
h = 0.25

[material]
density = 0:1.2, 1:1

[scenario]
T = 0.5
dt = 0.1

[solver]
cs_samples = 2

[output]
vtk = false
"""


def verdict(request, number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    with request.config.pluginmanager.getplugin("capturemanager").global_and_fixture_disabled():
        print("\n" + line)
    assert ok, line


def _rates(errors):
    e = np.asarray(errors)
    return np.log2(e[:-1] / e[1:])


# ----------------------------------------------------------------------
# shared scenario runs


@pytest.fixture(scope="module")
def heated_runs(tmp_path_factory):
    runs = []
    for k in range(2):
        cfg = parse_config_text(HEATED_CHANNEL, source="heated-channel.ini")
        out = tmp_path_factory.mktemp(f"heated{k}")
        t0 = time.perf_counter()
        outcome = run_scenario(cfg, out)
        runs.append((outcome, time.perf_counter() - t0))
    return runs


@pytest.fixture(scope="module")
def zero_run(tmp_path_factory):
    cfg = parse_config_text(ZERO_DATA, source="zero-data.ini")
    return run_scenario(cfg, tmp_path_factory.mktemp("zero"))


@pytest.fixture(scope="module")
def poiseuille_march():
    """Criterion 3 set-up: march the momentum step with lagged convection to steady state."""
    t0 = time.perf_counter()
    mesh = generate_pipe(channel_spec(4.0, 1.0, 0.1))
    s = MomentumSolver(mesh, 1.0, 1.0, tol=1e-12)
    E = FeSpace(mesh, 1)
    law = material_from_table([(0.0, 1.0)])
    f = np.array([2.0, 0.0])
    u = np.zeros(s.V.ndofs)
    history = [u]
    for _ in range(500):
        load = s.momentum_rhs(np.zeros(E.ndofs), u, f, 0.0, E, law)
        un, p, _ = s.stokes_step(u, load)
        step = np.sqrt((un - u) @ (s.M @ (un - u)))
        u = un
        history.append(u)
        if step < 1e-10:
            break
    return s, E, u, p, step, history, time.perf_counter() - t0


# ----------------------------------------------------------------------


def test_criterion_1_material_law(request, piecewise_law):
    t0 = time.perf_counter()
    law = piecewise_law
    rng = np.random.default_rng(2024)
    e = np.concatenate([rng.uniform(-1e3, 1e3, 5000), rng.uniform(-1.0, 16.0, 5000)])
    theta = law.inverse_enthalpy(e)
    round_trip = np.all(np.abs(law.enthalpy(theta) - e) <= 1e-10 * (1 + np.abs(e)))
    # kappa_1 = lambda/(c_v rho_2), kappa_2 = lambda/(c_v rho_1), exactly
    c = law.law
    k1, k2 = c.conductivity / (c.c_v * c.rho_max), c.conductivity / (c.c_v * c.rho_min)
    kap = law.kappa(e)
    bounds = law.kappa_min == k1 and law.kappa_max == k2 and np.all((k1 <= kap) & (kap <= k2))
    # all pairs: consecutive sorted samples plus 10^4 random pairs
    order = np.argsort(e)
    es, ts = e[order], theta[order]
    distinct = np.diff(es) > 0
    monotone = np.all(np.diff(ts)[distinct] > 0)
    i, j = rng.integers(0, e.size, (2, 10_000))
    mask = e[i] != e[j]
    monotone &= np.all((theta[i] - theta[j])[mask] * np.sign((e[i] - e[j])[mask]) > 0)
    L = law.lipschitz_bound()
    lipschitz = np.all(np.abs(np.diff(ts)) <= L * np.diff(es)) and np.all(
        np.abs(theta[i] - theta[j]) <= L * np.abs(e[i] - e[j]))
    elapsed = time.perf_counter() - t0
    ok = bool(round_trip and bounds and monotone and lipschitz and elapsed < 1.0)
    verdict(request, 1, ok, f"round trip {round_trip}, kappa bounds {bounds}, monotone {monotone}, "
                            f"Lipschitz {lipschitz}, {elapsed:.3f} s")


def test_criterion_2_assembly_oracles(request, square4):
    tri = FeSpace(single_triangle(), 1)
    K_ref = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    M_ref = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 24.0
    err_local = max(np.abs(fem.assemble_stiffness(tri).toarray() - K_ref).max(),
                    np.abs(fem.assemble_mass(tri).toarray() - M_ref).max())
    # monomials on the reference simplex against prod a_i! / (d + sum a)!
    err_quad = 0.0
    for dim in (1, 2, 3):
        for deg in range(10):
            pts, w = simplex_rule(dim, deg)
            for exps in np.ndindex(*(deg + 1,) * dim):
                if sum(exps) > deg:
                    continue
                exact = np.prod([factorial(a) for a in exps]) / factorial(dim + sum(exps))
                err_quad = max(err_quad, abs(w @ np.prod(pts ** np.array(exps), axis=1) - exact))
    # form examples with exact values
    V, Q = taylor_hood(square4)
    E = FeSpace(square4, 1)
    X = lambda x, t: np.stack([x[..., 0], 0 * x[..., 0]], -1)  # noqa: E731
    ex = V.interpolate([1.0, 0.0])
    cube = FeSpace(cube_mesh(2), 2, 3)
    ux3 = cube.interpolate(lambda x, t: np.stack([x[..., 0], 0 * x[..., 0], 0 * x[..., 0]], -1))
    chan = generate_pipe(channel_spec(4.0, 1.0, 0.5))
    Ec = FeSpace(chan, 1)
    Vc, _ = taylor_hood(chan)
    one_c = np.ones(Ec.ndofs)
    checks = {
        "a_u cube": (ux3 @ fem.assemble_a_u(cube) @ ux3, 1.0),
        "b_u": (ex @ fem.assemble_b_u(ex, V) @ V.interpolate(X), 1.0),
        "divergence": (np.ones(Q.ndofs) @ fem.assemble_divergence(V, Q) @ V.interpolate(X), 1.0),
        "b_e": (np.ones(E.ndofs) @ fem.assemble_b_e(ex, V, E) @ E.interpolate(lambda x, t: x[..., 0]), 1.0),
        "gamma": (one_c @ fem.assemble_gamma_mass(Ec) @ one_c, 8.0),
        "dissipation": (fem.assemble_dissipation_load(
            *(2 * [V.interpolate(lambda x, t: np.stack([x[..., 0], -x[..., 1]], -1))]), V, E).sum(), 2.0),
        "g": (one_c @ fem.assemble_rhs_g(1.0, 0.0, 0.0, Ec, alpha=1.0), 8.0),
        "flux": (diag.cut_fluxes(Vc.interpolate(poiseuille), Vc)[2], 4.0 / 3.0),
    }
    err_forms = max(abs(a - b) for a, b in checks.values())
    ok = err_local <= 1e-14 and err_quad <= 1e-12 and err_forms <= 1e-12
    verdict(request, 2, ok, f"local matrices {err_local:.1e} (<= 1e-14), quadrature {err_quad:.1e}, "
                            f"form examples {err_forms:.1e} (<= 1e-12)")


def test_criterion_3_poiseuille(request, poiseuille_march):
    s, _, u, p, step, history, elapsed = poiseuille_march
    exact = s.V.interpolate(poiseuille)
    rel = diag.l2_norm(s.V, u - exact, s.quad) / diag.l2_norm(s.V, exact, s.quad)
    outlet = fem.facet_quadrature(s.mesh, 2)
    p_mean = outlet.integrate(outlet.values(s.Q, p)) / outlet.integrate(np.ones_like(outlet.ds))
    f_scale = 2.0
    ok = step < 1e-10 and rel <= 0.02 and abs(p_mean) <= 1e-3 * f_scale and elapsed < 60
    verdict(request, 3, ok, f"{len(history) - 1} steps, L2 error {100 * rel:.3f}% (<= 2%), "
                            f"outlet mean pressure {p_mean:.2e} (<= {1e-3 * f_scale:g}), {elapsed:.1f} s")


def _mms_run(n, dt, T, sol, tol=1e-10):
    mesh = unit_square_mesh(n)
    d = ScenarioData(mesh, material_from_table([(0.0, 1.0)]), T, dt, f=sol["f"], h=sol["h"], q_e=sol["q_e"],
                     u0=sol["u"], e0=sol["e"])
    p = CoupledProblem(d)
    return p, picard_solve(p, tol=tol, track_x_norm=False)


def test_criterion_4_mms(request):
    t0 = time.perf_counter()
    # linear-in-time amplitudes: implicit Euler is exact in time, so only space errs
    sol = mms.solution()
    T = 0.5
    eu, ep, ee = [], [], []
    for n in (8, 16, 32):
        p, r = _mms_run(n, 0.25, T, sol)
        eu.append(diag.l2_error(p.V, r.U[-1], sol["u"], T, p.quad))
        ep.append(diag.l2_error(p.Q, r.P[-1], sol["P"], T, p.quad))
        ee.append(diag.l2_error(p.E, r.E[-1], sol["e"], T, p.quad))
    ru, rp, re = _rates(eu), _rates(ep), _rates(ee)
    # temporal order by self-convergence under dt halving on a fixed mesh
    wiggle = mms.solution(s=1 + S.sin(2 * mms.t), s_e=1 + S.sin(2 * mms.t))
    finals = []
    for dt in (0.05, 0.025, 0.0125):
        p, r = _mms_run(8, dt, 1.0, wiggle)
        finals.append((r.U[-1], r.E[-1]))
    du = [diag.l2_norm(p.V, a[0] - b[0]) for a, b in zip(finals, finals[1:])]
    de = [diag.l2_norm(p.E, a[1] - b[1]) for a, b in zip(finals, finals[1:])]
    rt = min(_rates(du).min(), _rates(de).min())
    elapsed = time.perf_counter() - t0
    ok = ru.min() >= 2.5 and rp.min() >= 1.5 and re.min() >= 1.8 and rt >= 0.9 and elapsed < 300
    verdict(request, 4, ok, f"velocity {ru.round(2).tolist()} (>= 2.5), pressure {rp.round(2).tolist()} (>= 1.5), "
                            f"enthalpy {re.round(2).tolist()} (>= 1.8), time {rt:.2f} (>= 0.9), {elapsed:.1f} s")


def test_criterion_5_trilinear_identity(request):
    force = lambda x, t: np.stack([1 + np.sin(np.pi * x[..., 1]) * x[..., 0],  # noqa: E731
                                   np.cos(2 * x[..., 0]) + x[..., 1] ** 2], -1)
    vf = lambda x, t: np.stack([np.sin(x[..., 0] + 2 * x[..., 1]), np.exp(x[..., 0]) * x[..., 1]], -1)  # noqa: E731
    pf = lambda x, t: np.cos(3 * x[..., 0]) + x[..., 1]  # noqa: E731
    du, de, div = [], [], []
    for n in (4, 8, 16):
        mesh = unit_square_mesh(n)
        w, _, s = steady_stokes(mesh, force, tol=1e-13, method="direct")
        V, E = s.V, FeSpace(mesh, 1)
        v, phi = V.interpolate(vf), E.interpolate(pf)
        du.append(abs(v @ fem.assemble_b_u(w, V) @ v - diag.boundary_convection_term(w, V, v, V)))
        de.append(abs(phi @ fem.assemble_b_e(w, V, E) @ phi - diag.boundary_convection_term(w, V, phi, E)))
        div.append(np.linalg.norm(s.D @ w))
    ru, re = _rates(du), _rates(de)
    ok = ru.min() >= 1 and re.min() >= 1 and max(div) <= 1e-12
    verdict(request, 5, ok, f"b_u orders {ru.round(2).tolist()}, b_e orders {re.round(2).tolist()} (>= 1), "
                            f"discrete divergence {max(div):.1e}")


def test_criterion_6_picard_contraction(request, heated_runs):
    outcome, elapsed = heated_runs[0]
    s = outcome.summary
    pic, sm = s["picard"], s["smallness"]
    inc = pic["increments"]
    monotone = all(b < a for a, b in zip(inc[1:], inc[2:]))
    radius = sm["ball_radius"]
    within = all(x <= radius + 1e-8 for x in pic["x_norms"])
    ok = (outcome.exit_code == 0 and sm["passed"] and sm["C_S_source"].startswith("estimate") and pic["converged"]
          and pic["iterations"] <= 30 and inc[-1] / inc[0] <= 1e-6 and monotone and within and elapsed < 600)
    verdict(request, 6, ok, f"smallness margin {sm['margin']:.3e} with C_S {sm['C_S']:.4g} (estimated), "
                            f"{pic['iterations']} iterations, monotone after 2: {monotone}, "
                            f"max X-norm {max(pic['x_norms']):.3e} <= radius {radius:.3e}, {elapsed:.1f} s")


def test_criterion_7_sign_invariants(request, heated_runs, zero_run, poiseuille_march):
    from pipeflow.config import parse_config_text as pc
    from pipeflow.run import build_problem

    worst_gamma, worst_diss = np.inf, np.inf
    for outcome, text in ((heated_runs[0][0], HEATED_CHANNEL), (zero_run, ZERO_DATA)):
        problem = build_problem(pc(text))
        with np.load(outcome.output / "trajectories.npz") as z:
            U, E = z["U"], z["E"]
        for u, e in zip(U, E):
            worst_gamma = min(worst_gamma, problem.energy.boundary_pairing(e))
            load = fem.assemble_dissipation_load(u, u, problem.V, problem.E, problem.quad)
            worst_diss = min(worst_diss, load.min() / max(1.0, np.abs(load).max()))
    s, E_p, _, _, _, history, _ = poiseuille_march
    for u in history[:: max(1, len(history) // 10)] + [history[-1]]:
        load = fem.assemble_dissipation_load(u, u, s.V, E_p, s.quad)
        worst_diss = min(worst_diss, load.min() / max(1.0, np.abs(load).max()))
    rot = s.V.interpolate(lambda x, t: np.stack([-x[..., 1], x[..., 0]], -1))
    rot_load = np.abs(fem.assemble_dissipation_load(rot, rot, s.V, E_p, s.quad)).max()
    ok = worst_gamma >= -1e-12 and worst_diss >= -1e-12 and rot_load <= 1e-13
    verdict(request, 7, ok, f"min wall pairing {worst_gamma:.3e} (>= -1e-12), min dissipation load "
                            f"{worst_diss:.3e}, rigid rotation load {rot_load:.1e} (<= 1e-13)")


def test_criterion_8_backflow(request, poiseuille_march):
    s = poiseuille_march[0]
    u = s.V.interpolate(poiseuille)
    b = diag.backflow_energy(u, s.V)
    r = diag.backflow_energy(-u, s.V)
    err = abs(b[1] - 16 / 35)
    ok = err <= 1e-6 and b[2] == 0.0 and r[1] == b[2] and r[2] == b[1]
    verdict(request, 8, ok, f"inlet {b[1]:.12f} vs 16/35 (error {err:.1e}), outlet {b[2]}, "
                            f"reversal swap exact {r[1] == b[2] and r[2] == b[1]}")


def test_criterion_9_gronwall_sentinel(request, heated_runs, zero_run):
    zero_flag = zero_run.summary["gronwall_satisfied"]
    flags = [o.summary["gronwall_satisfied"] for o, _ in heated_runs]
    # locked value of the heated-channel sentinel
    ok = zero_flag is True and flags[0] == flags[1] is True
    verdict(request, 9, ok, f"zero-data flag {zero_flag}, heated-channel flags {flags} (locked: True)")


def test_criterion_10_determinism(request, heated_runs):
    a, b = (o.output / "diagnostics.csv" for o, _ in heated_runs)
    same = a.read_bytes() == b.read_bytes()
    summaries = [json.loads((o.output / "summary.json").read_text()) for o, _ in heated_runs]
    ok = same and summaries[0]["smallness"] == summaries[1]["smallness"]
    verdict(request, 10, ok, f"diagnostics.csv byte-identical across two seeded runs: {same}")
