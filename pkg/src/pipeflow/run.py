"""Scenario orchestration: config -> mesh, data, fixed-point solve, artifacts.

Artifacts written to the output directory:

``vtk/step_NNNN.vtk``
    velocity, pressure, enthalpy and temperature at the mesh vertices.
``diagnostics.csv``
    long-format table ``quantity,step,time,value`` with per-step norms,
    backflow and flux per cut, the Gronwall bound, Picard increments and the
    Gronwall flag.
``summary.json``
    verdicts (convergence, smallness, ball bound, Gronwall) and metadata.
``trajectories.npz``
    raw coefficient trajectories.

Nothing time- or host-dependent is written, so identical configs give
byte-identical CSV and summary files.
"""
from __future__ import annotations

import json
import logging
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import fem
from .config import RunConfig
from .coupler import (CoupledProblem, PicardError, ScenarioData, ball_radius, check_smallness,
                      estimate_cs, picard_solve)
from .io import read_msh, write_csv, write_vtk
from .materials import EnthalpyMap, material_from_table
from .mesh import Branch, PipeMesh, PipeSpec, channel_spec, generate_pipe, unit_square_mesh, validate_geometry

log = logging.getLogger(__name__)

DIAGNOSTICS_HEADER = ("quantity", "step", "time", "value")


def build_mesh(cfg: RunConfig) -> PipeMesh:
    m = cfg.mesh
    if m.generator == "channel":
        return generate_pipe(channel_spec(m.length, m.half_width, m.h))
    if m.generator == "square":
        return unit_square_mesh(m.n)
    if m.generator == "cylinder":
        spec = PipeSpec((Branch((0.0, 0.0, 0.0), (m.length, 0.0, 0.0), m.half_width),), m.h, name=f"cylinder-h{m.h:g}")
        return generate_pipe(spec)
    if m.generator == "tjunction":
        mid = m.length / 2
        spec = PipeSpec((
            Branch((0.0, 0.0), (m.length, 0.0), m.half_width),
            Branch((mid, 0.0), (mid, m.half_width + m.branch_length), m.branch_radius),
        ), m.h, name=f"tjunction-h{m.h:g}")
        return generate_pipe(spec)
    return read_msh(m.path)


def build_material(cfg: RunConfig) -> EnthalpyMap:
    mat = cfg.material
    return material_from_table(cfg.density_table(), c_v=mat.c_v, conductivity=mat.conductivity,
                               viscosity=mat.viscosity, alpha=mat.alpha)


def build_data(cfg: RunConfig, mesh: PipeMesh, material: EnthalpyMap) -> ScenarioData:
    s = cfg.scenario
    return ScenarioData(mesh, material, s.T, s.dt, f=cfg.field("f"), h=cfg.field("h"),
                        theta_inf=cfg.field("theta_inf"), q_e=cfg.field("q_e"),
                        u0=cfg.field("u0"), e0=cfg.field("e0"))


def build_problem(cfg: RunConfig, mesh: PipeMesh | None = None):
    mesh = mesh or build_mesh(cfg)
    data = build_data(cfg, mesh, build_material(cfg))
    sol = cfg.solver
    return CoupledProblem(data, linear_tol=sol.linear_tol, newton_tol=sol.newton_tol, saddle_method=sol.saddle,
                          supg=sol.supg)


@dataclass
class RunOutcome:
    exit_code: int
    summary: dict
    output: Path
    files: list[str] = field(default_factory=list)


def vertex_fields(problem: CoupledProblem, u, p, e) -> dict[str, np.ndarray]:
    mat = problem.data.material
    ev = problem.E.vertex_values(e)
    return {
        "velocity": problem.V.vertex_values(u),
        "pressure": problem.Q.vertex_values(p),
        "enthalpy": ev,
        "temperature": mat.inverse_enthalpy(ev),
    }


def write_fields(out: Path, problem: CoupledProblem, U, P, E, every: int = 1) -> list[str]:
    vdir = out / "vtk"
    vdir.mkdir(parents=True, exist_ok=True)
    files = []
    for n in range(len(U)):
        if n % every and n != len(U) - 1:
            continue
        path = vdir / f"step_{n:04d}.vtk"
        write_vtk(path, problem.data.mesh, vertex_fields(problem, U[n], P[n], E[n]), title=f"pipeflow step {n}")
        files.append(str(path.relative_to(out)))
    return files


def diagnostic_rows(problem: CoupledProblem, U, E, increments, gron) -> list[tuple]:
    V, Es, q = problem.V, problem.E, problem.quad
    times = problem.data.times
    rows = []
    budget = diag.energy_budget(U, V, q)
    cuts = problem.data.mesh.cut_ids
    for n, t in enumerate(times):
        t = float(t)
        rows.append(("kinetic_energy", n, t, float(budget.kinetic[n])))
        rows.append(("dissipation", n, t, float(budget.dissipation[n])))
        rows.append(("velocity_h1", n, t, diag.h1_norm(V, U[n], q)))
        rows.append(("velocity_l24", n, t, diag.lp_norm(V, U[n], diag.X_SPACE_EXPONENT, q)))
        rows.append(("velocity_w1_24_11", n, t, diag.w1p_norm(V, U[n], diag.X_GRAD_EXPONENT, q)))
        rows.append(("enthalpy_l2", n, t, diag.l2_norm(Es, E[n], q)))
        back = diag.backflow_energy(U[n], V)
        for i in cuts:
            rows.append((f"flux_cut{i}", n, t, float(budget.fluxes[i][n])))
            rows.append((f"backflow_cut{i}", n, t, back[i]))
        rows.append(("wall_pairing", n, t, float(problem.energy.boundary_pairing(E[n]))))
        rows.append(("gronwall_energy", n, t, float(gron.energy[n])))
        rows.append(("gronwall_bound", n, t, float(gron.bound[n])))
    for k, inc in enumerate(increments, start=1):
        rows.append(("picard_increment", k, "", float(inc)))
    rows.append(("gronwall_satisfied", len(times) - 1, float(times[-1]), int(gron.satisfied)))
    return rows


def _json_float(v):
    v = float(v)
    return v if np.isfinite(v) else str(v)


def run_scenario(cfg: RunConfig, output: str | Path | None = None) -> RunOutcome:
    """Solve the coupled problem for ``cfg`` and write all artifacts.

    Failures are caught: whatever was computed is written, the summary
    records the error, and the exit code is nonzero.
    """
    out = Path(output or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict = {"config": cfg.source, "status": "error"}
    files: list[str] = []

    def finish(code):
        summary["exit_code"] = code
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        files.append("summary.json")
        return RunOutcome(code, summary, out, files)

    try:
        mesh = build_mesh(cfg)
        report = validate_geometry(mesh)
        summary["mesh"] = {"name": mesh.name, "dim": mesh.dim, "points": mesh.n_points, "cells": mesh.n_cells,
                           "cuts": mesh.cut_ids, "geometry_ok": report.passed, "problems": report.problems}
        problem = build_problem(cfg, mesh)
    except Exception as exc:  # noqa: BLE001
        summary["error"] = f"{type(exc).__name__}: {exc}"
        log.error("setup failed: %s", exc)
        return finish(2)

    data = problem.data
    sol = cfg.solver
    summary["quadrature_degree"] = problem.quad.degree
    summary["time_steps"] = data.nsteps
    result = None
    code = 0
    try:
        if sol.c_s > 0:
            cs, cs_source = sol.c_s, "config"
        else:
            est = estimate_cs(mesh, data.dt, data.T, samples=sol.cs_samples, seed=cfg.output.seed,
                              linear_tol=sol.linear_tol)
            cs, cs_source = est.value, "estimate (lower bound, mesh " + est.mesh + ")"
        f_norm = diag.l2l2_norm_of_datum(mesh, data.f, data.times, (mesh.dim,), problem.quad)
        u0_norm = diag.h1_norm(problem.V, problem.u0, problem.quad)
        small = check_smallness(f_norm, u0_norm, data.T, cs, data.material.law.rho_max)
        radius = ball_radius(cs, data.T)
        summary["smallness"] = {"C_S": cs, "C_S_source": cs_source, "passed": small.passed,
                                "margin": small.margin, "threshold": small.threshold,
                                "data_size": small.data_size, "ball_radius": radius}
        try:
            result = picard_solve(problem, sol.picard_tol, sol.max_outer, sol.relaxation)
        except PicardError as exc:
            result = exc.result
            summary["error"] = str(exc)
            code = 1
        summary["picard"] = {
            "converged": result.converged,
            "iterations": result.iterations,
            "increments": [_json_float(v) for v in result.increments],
            "non_contracting": result.non_contracting,
            "x_norms": [_json_float(v) for v in result.x_norms],
            "within_ball": bool(all(x <= radius + 1e-8 for x in result.x_norms)),
        }
        if result.converged:
            n = result.iterations
            summary["message"] = f"fixed point in {n} iteration" + ("" if n == 1 else "s")
        G = problem.g_loads()
        law = data.material.law
        gron = diag.gronwall_bound(result.E, result.U, G, problem.e0, problem.V, problem.E, data.dt,
                                   sol.gronwall_c1, sol.gronwall_c2, sol.gronwall_c3, problem.quad)
        summary["gronwall_satisfied"] = gron.satisfied
        summary["material"] = {"rho_min": law.rho_min, "rho_max": law.rho_max}
    except Exception as exc:  # noqa: BLE001
        summary["error"] = f"{type(exc).__name__}: {exc}"
        log.error("run failed: %s", exc)
        log.debug("%s", traceback.format_exc())
        if result is None:
            return finish(1)
        gron = None
        code = 1

    np.savez(out / "trajectories.npz", U=result.U, P=result.P, E=result.E, times=data.times)
    files.append("trajectories.npz")
    if cfg.output.vtk:
        files += write_fields(out, problem, result.U, result.P, result.E, cfg.output.vtk_every)
    if gron is not None:
        write_csv(out / "diagnostics.csv", DIAGNOSTICS_HEADER,
                  diagnostic_rows(problem, result.U, result.E, result.increments, gron))
        files.append("diagnostics.csv")
    write_csv(out / "picard.csv", ("iteration", "increment", "relative", "x_norm"),
              [(k + 1, result.increments[k], result.relative[k],
                result.x_norms[k] if k < len(result.x_norms) else "") for k in range(result.iterations)])
    files.append("picard.csv")
    summary["status"] = "ok" if code == 0 else "failed"
    return finish(code)
