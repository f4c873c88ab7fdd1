import json

import meshio
import numpy as np
import pytest

from pipeflow.cli import main
from pipeflow.io import read_csv
from pipeflow.materials import material_from_table

from conftest import poiseuille

BASE = """
[mesh]
generator = channel
h = {h}

[material]
density = {density}

[scenario]
T = {T}
dt = {dt}
f = {f}
e0 = {e0}
h = {hcoef}
theta_inf = {theta_inf}

[solver]
c_s = 1

[output]
vtk = {vtk}
vtk_every = 2
"""


def _config(tmp_path, name="run.ini", h=0.5, density="0:1", T=0.4, dt=0.2, f="0, 0", e0="0", hcoef="0",
            theta_inf="0", vtk="false"):
    p = tmp_path / name
    p.write_text(BASE.format(h=h, density=density, T=T, dt=dt, f=f, e0=e0, hcoef=hcoef, theta_inf=theta_inf, vtk=vtk))
    return p


def test_zero_data_run(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert main(["run", "--config", str(cfg), "--output", str(tmp_path / "out")]) == 0
    assert "fixed point in 1 iteration" in capsys.readouterr().out
    s = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert s["status"] == "ok" and s["picard"]["iterations"] == 1 and s["gronwall_satisfied"]
    assert s["smallness"]["C_S_source"] == "config"
    with np.load(tmp_path / "out" / "trajectories.npz") as z:
        assert not z["U"].any() and not z["P"].any() and not z["E"].any()


def test_run_artifacts_and_temperature(tmp_path):
    law = "0:1.2, 1:1"
    cfg = _config(tmp_path, density=law, f="0.02, -0.05", e0="0.5 + 0.2*x", hcoef="1",
                  theta_inf="0.5", vtk="true")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--output", str(out)]) == 0
    files = sorted(p.name for p in (out / "vtk").iterdir())
    assert files == ["step_0000.vtk", "step_0002.vtk"]
    m = meshio.read(out / "vtk" / "step_0002.vtk")
    mat = material_from_table([(0, 1.2), (1, 1)])
    np.testing.assert_allclose(m.point_data["temperature"], mat.inverse_enthalpy(m.point_data["enthalpy"]),
                               rtol=1e-14, atol=1e-15)
    header, rows = read_csv(out / "diagnostics.csv")
    assert header == ["quantity", "step", "time", "value"]
    names = {r[0] for r in rows}
    assert {"kinetic_energy", "flux_cut1", "backflow_cut2", "gronwall_bound", "picard_increment"} <= names
    with np.load(out / "trajectories.npz") as z:
        assert z["U"].shape[0] == 3


def test_reruns_are_byte_identical(tmp_path):
    cfg = _config(tmp_path, density="0:1.2, 1:1", f="0.02, -0.05", e0="0.5", hcoef="1", theta_inf="0.5")
    for k in (1, 2):
        assert main(["run", "--config", str(cfg), "--output", str(tmp_path / f"o{k}")]) == 0
    for name in ("diagnostics.csv", "summary.json", "picard.csv"):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()


def test_stokes_subcommand_poiseuille(tmp_path, capsys):
    from pipeflow.fem import FeSpace
    from pipeflow.mesh import channel_spec, generate_pipe
    from pipeflow.stokes import taylor_hood

    cfg = _config(tmp_path, h=0.25, T=6, dt=1, f="2, 0", vtk="true")
    out = tmp_path / "s"
    assert main(["stokes", "--config", str(cfg), "--output", str(out)]) == 0
    assert "stokes: 6 steps" in capsys.readouterr().out
    V, _ = taylor_hood(generate_pipe(channel_spec(4.0, 1.0, 0.25)))
    with np.load(out / "trajectories.npz") as z:
        u = z["U"][-1]
    from pipeflow import diagnostics as diag

    exact = V.interpolate(poiseuille)
    assert diag.l2_norm(V, u - exact) <= 0.02 * diag.l2_norm(V, exact)
    m = meshio.read(out / "vtk" / "step_0006.vtk")
    ref = poiseuille(m.points[:, :2], 0.0)
    err = m.point_data["velocity"][:, :2] - ref
    assert np.sqrt((err**2).sum() / (ref**2).sum()) <= 0.02


def test_energy_subcommand(tmp_path, capsys):
    cfg = _config(tmp_path, e0="1", theta_inf="0.5")
    out = tmp_path / "s"
    assert main(["stokes", "--config", str(cfg), "--output", str(out)]) == 0
    out2 = tmp_path / "e"
    assert main(["energy", "--config", str(cfg), "--velocity", str(out / "trajectories.npz"),
                 "--output", str(out2)]) == 0
    assert "energy: 2 steps" in capsys.readouterr().out
    with np.load(out2 / "trajectories.npz") as z:
        E = z["E"]
    # at rest the wall exchange toward theta_inf = 0.5 only cools
    assert 0.5 < E[-1].mean() < E[1].mean() < 1.0
    bad = _config(tmp_path, name="other.ini", T=0.6)
    assert main(["energy", "--config", str(bad), "--velocity", str(out / "trajectories.npz"),
                 "--output", str(tmp_path / "x")]) == 2


def test_mesh_subcommand(tmp_path, capsys):
    cfg = _config(tmp_path)
    assert main(["mesh", "--config", str(cfg), "--output", str(tmp_path / "m")]) == 0
    assert "geometry ok" in capsys.readouterr().out
    assert (tmp_path / "m" / "mesh.msh").exists()
    msh = tmp_path / "m.ini"
    msh.write_text(f"[mesh]\ngenerator = msh\npath = {tmp_path / 'm' / 'mesh.msh'}\n")
    assert main(["mesh", "--config", str(msh), "--output", str(tmp_path / "m2")]) == 0


def test_estimate_cs_subcommand(tmp_path, capsys):
    cfg = _config(tmp_path)
    args = ["estimate-cs", "--config", str(cfg), "--samples", "2", "--seed", "5"]
    assert main(args) == 0
    first = json.loads(capsys.readouterr().out)
    assert first["samples"] == 2 and first["seed"] == 5 and first["C_S_lower_bound"] > 0
    assert main(args) == 0
    assert json.loads(capsys.readouterr().out) == first


def test_config_errors_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[material]\nviscocity = 1\n")
    assert main(["run", "--config", str(p)]) == 2
    assert "viscocity" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "nope.ini")]) == 2
    assert main(["run", "--seed", "-1"]) == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    p = tmp_path / "m.ini"
    p.write_text(f"[mesh]\ngenerator = msh\npath = {tmp_path / 'missing.msh'}\n")
    assert main(["mesh", "--config", str(p)]) == 1
    assert "error" in capsys.readouterr().err


def test_run_setup_failure_writes_summary(tmp_path):
    p = tmp_path / "u.ini"
    p.write_text("[mesh]\nh = 0.5\n[scenario]\nu0 = 1, 0\n[solver]\nc_s = 1\n")
    assert main(["run", "--config", str(p), "--output", str(tmp_path / "o")]) == 2
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["status"] == "error" and "walls" in s["error"]


def test_threads_flag(tmp_path):
    cfg = _config(tmp_path)
    assert main(["run", "--config", str(cfg), "--threads", "1", "--output", str(tmp_path / "o")]) == 0


def test_usage_error():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
