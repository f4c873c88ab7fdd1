"""Command-line entry point.

    pipeflow mesh        --config run.ini --output out/   generate and validate the mesh
    pipeflow run         --config run.ini                 full fixed-point solve
    pipeflow stokes      --config run.ini                 momentum subsystem only
    pipeflow energy      --config run.ini --velocity out/trajectories.npz
    pipeflow estimate-cs --config run.ini --samples 32

Set PIPEFLOW_LOG=DEBUG|INFO|WARNING to control log verbosity.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .config import ConfigError, RunConfig, parse_config
from .coupler import estimate_cs
from .io import write_csv, write_msh, write_vtk
from .run import build_mesh, build_problem, run_scenario, write_fields
from .mesh import MeshError, validate_geometry

log = logging.getLogger("pipeflow")


def _setup_logging():
    level = os.environ.get("PIPEFLOW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _threads(n):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _load(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig(source="<defaults>")
    if args.seed is not None:
        cfg.output.seed = args.seed
    if args.output:
        cfg.output.directory = args.output
    return cfg


def cmd_mesh(cfg: RunConfig, args) -> int:
    mesh = build_mesh(cfg)
    report = validate_geometry(mesh)
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    write_msh(out / "mesh.msh", mesh)
    write_vtk(out / "mesh.vtk", mesh, {}, title=mesh.name)
    print(f"{mesh!r}")
    print(f"wall measure {mesh.wall_measure():.6g}, cuts {mesh.cut_ids}, min quality {report.min_quality:.3g}")
    for p in report.problems:
        print(f"problem: {p}")
    print("geometry ok" if report.passed else "geometry FAILED")
    return 0 if report.passed else 1


def cmd_run(cfg: RunConfig, args) -> int:
    outcome = run_scenario(cfg)
    s = outcome.summary
    print(s.get("message") or s.get("error") or s["status"])
    if "smallness" in s:
        sm = s["smallness"]
        print(f"smallness {'passed' if sm['passed'] else 'failed'} (margin {sm['margin']:.3e}, C_S {sm['C_S']:.4g})")
    print(f"artifacts in {outcome.output}")
    return outcome.exit_code


def _save_subsystem(out: Path, problem, U, P, E, cfg, extra_rows):
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "trajectories.npz", U=U, P=P, E=E, times=problem.data.times)
    if cfg.output.vtk:
        write_fields(out, problem, U, P, E, cfg.output.vtk_every)
    write_csv(out / "diagnostics.csv", ("quantity", "step", "time", "value"), extra_rows)


def cmd_stokes(cfg: RunConfig, args) -> int:
    """Momentum trajectory with zero lagged convection and buoyancy at e0."""
    problem = build_problem(cfg)
    d = problem.data
    n = d.nsteps
    E = np.tile(problem.e0, (n + 1, 1))
    U, P = problem.momentum.solve_transient(E, np.zeros((n + 1, problem.V.ndofs)), d.f, problem.u0, n,
                                            problem.E, d.material)
    rows = []
    for k, t in enumerate(d.times):
        flux = diag.cut_fluxes(U[k], problem.V)
        rows.append(("divergence_residual", k, float(t), problem.momentum.divergence_residual(U[k])))
        rows.append(("velocity_h1", k, float(t), diag.h1_norm(problem.V, U[k], problem.quad)))
        for i, v in flux.items():
            rows.append((f"flux_cut{i}", k, float(t), v))
    _save_subsystem(Path(cfg.output.directory), problem, U, P, E, cfg, rows)
    print(f"stokes: {n} steps, final H1 norm {diag.h1_norm(problem.V, U[-1], problem.quad):.6e}")
    return 0


def cmd_energy(cfg: RunConfig, args) -> int:
    """Enthalpy trajectory for a stored velocity, diffusivity frozen at e0."""
    problem = build_problem(cfg)
    d = problem.data
    with np.load(args.velocity) as z:
        U = np.array(z["U"])
        P = np.array(z["P"]) if "P" in z else np.zeros((len(U), problem.Q.ndofs))
    if U.shape != (d.nsteps + 1, problem.V.ndofs):
        print(f"error: stored velocity has shape {U.shape}, expected {(d.nsteps + 1, problem.V.ndofs)}",
              file=sys.stderr)
        return 2
    E = problem.energy.solve_transient(np.tile(problem.e0, (d.nsteps + 1, 1)), U, d, problem.e0, d.nsteps)
    rows = []
    for k, t in enumerate(d.times):
        rows.append(("enthalpy_l2", k, float(t), diag.l2_norm(problem.E, E[k], problem.quad)))
        rows.append(("wall_pairing", k, float(t), problem.energy.boundary_pairing(E[k])))
    _save_subsystem(Path(cfg.output.directory), problem, U, P, E, cfg, rows)
    print(f"energy: {d.nsteps} steps, final L2 norm {diag.l2_norm(problem.E, E[-1], problem.quad):.6e}")
    return 0


def cmd_estimate_cs(cfg: RunConfig, args) -> int:
    mesh = build_mesh(cfg)
    samples = args.samples or cfg.solver.cs_samples
    est = estimate_cs(mesh, cfg.scenario.dt, cfg.scenario.T, samples=samples, seed=cfg.output.seed,
                      linear_tol=cfg.solver.linear_tol)
    print(json.dumps({"C_S_lower_bound": est.value, "mesh": est.mesh, "samples": len(est.ratios),
                      "skipped": est.skipped, "seed": cfg.output.seed}, indent=2, sort_keys=True))
    return 0


COMMANDS = {
    "mesh": cmd_mesh,
    "run": cmd_run,
    "stokes": cmd_stokes,
    "energy": cmd_energy,
    "estimate-cs": cmd_estimate_cs,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pipeflow", description="Heat-conducting flow in truncated pipes.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--output", help="output directory (overrides [output] directory)")
    common.add_argument("--seed", type=int, help="random seed (overrides [output] seed)")
    common.add_argument("--threads", type=int, default=0, help="limit BLAS/LAPACK threads")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("mesh", parents=[common], help="generate and validate the mesh")
    sub.add_parser("run", parents=[common], help="full coupled solve")
    sub.add_parser("stokes", parents=[common], help="momentum subsystem only")
    p = sub.add_parser("energy", parents=[common], help="enthalpy subsystem for a stored velocity")
    p.add_argument("--velocity", required=True, help="npz file with a velocity trajectory U")
    p = sub.add_parser("estimate-cs", parents=[common], help="sample the Stokes constant")
    p.add_argument("--samples", type=int, default=0, help="number of random samples")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return 2
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        with _threads(args.threads):
            return COMMANDS[args.command](cfg, args)
    except (MeshError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
