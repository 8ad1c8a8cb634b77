import json
import hashlib

import numpy as np
import pytest

from nozzleflow.cli import main
from nozzleflow.config import SCHEMA, load_config, parse_config
from nozzleflow.diagnostics import domain_convergence
from nozzleflow.errors import ConfigError
from nozzleflow.gas import DensityLaw, build_truncation
from nozzleflow.geometry import NozzleGeometry, NozzleProfile, ObstacleProfile
from nozzleflow.io import FIELD_HEADER, diff_fields, read_field
from nozzleflow.solver import SolverConfig

LAW = DensityLaw()

BASE = """\
geometry.family = straight
geometry.f_bar = 1.0
discretization.L = 4
discretization.n_r = 4
discretization.n_theta = 8
discretization.n_z = 16
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_report(path):
    out, section = {}, None
    for line in path.read_text().splitlines():
        if line.startswith("["):
            section = line.strip("[]")
        elif "=" in line:
            k, v = line.split("=", 1)
            out[f"{section}.{k.strip()}"] = v.strip()
    return out


def test_every_key_has_a_default_and_description():
    for key, (parser, default, doc) in SCHEMA.items():
        assert callable(parser) and doc
    assert parse_config("").echo() == {k: v[1] for k, v in SCHEMA.items()}


def test_negative_epsilon_is_a_config_error(tmp_path, capsys):
    path = write_cfg(tmp_path, BASE + "truncation.epsilon = -0.1\n")
    assert main(["solve", path, "--out", str(tmp_path / "o")]) == 2
    assert "truncation.epsilon" in capsys.readouterr().err
    with pytest.raises(ConfigError) as info:
        load_config(path).validate()
    assert info.value.field == "truncation.epsilon"


def test_unknown_and_malformed_keys(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_config("solver.newton_tolerance = 1e-9\n")
    assert info.value.field == "solver.newton_tolerance"
    with pytest.raises(ConfigError) as info:
        parse_config("discretization.n_r = four\n")
    assert info.value.field == "discretization.n_r"
    assert main(["solve", str(tmp_path / "missing.cfg")]) == 2


def test_solve_with_zero_flux(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", write_cfg(tmp_path, BASE + "flow.m0 = 0\n"), "--out", str(out)]) == 0
    assert (out / "field.txt").read_text().splitlines()[0] == FIELD_HEADER
    data = read_field(out / "field.txt")
    assert np.all(data[:, 3:7] == 0.0)
    assert read_report(out / "report.txt")["solve.max_speed"] == "0"


def test_verify_straight_cylinder(tmp_path):
    out = tmp_path / "o"
    assert main(["verify", write_cfg(tmp_path, BASE), "--out", str(out)]) == 0
    rep = read_report(out / "report.txt")
    checks = {k: v for k, v in rep.items() if k.startswith("verify.")}
    assert "verify.exact_linear_solution" in checks
    assert set(checks.values()) == {"pass"}


def test_numerical_failure_exits_with_one(tmp_path):
    # a single Newton step cannot reach the tolerance from the uniform start
    text = BASE + "obstacle.b = 0.4\nflow.m0 = 1.5\nsolver.max_newton = 1\nsolver.newton_tol = 1e-14\n"
    assert main(["solve", write_cfg(tmp_path, text), "--out", str(tmp_path / "o")]) == 1


def test_sequential_runs_are_bit_identical_and_checksummed(tmp_path):
    path = write_cfg(tmp_path, BASE + "obstacle.b = 0.4\nflow.m0 = 1.2\noutput.vtk = true\noutput.mesh = true\n")
    for name in ("a", "b"):
        assert main(["solve", path, "--sequential", "--out", str(tmp_path / name)]) == 0
    man_a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    man_b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert set(man_a["outputs"]) == {"field.txt", "field.vtk", "mesh.txt", "report.txt"}
    for name, digest in man_a["outputs"].items():
        assert hashlib.sha256((tmp_path / "a" / name).read_bytes()).hexdigest() == digest
    assert man_a["outputs"]["field.txt"] == man_b["outputs"]["field.txt"]
    assert man_a["config"]["obstacle.b"] == 0.4
    assert {"nozzleflow", "numpy", "scipy"} <= set(man_a["versions"])
    assert (tmp_path / "a" / "field.vtk").read_text().startswith("# vtk DataFile Version")


def test_diff_fields_self_is_zero(tmp_path):
    out = tmp_path / "o"
    main(["solve", write_cfg(tmp_path, BASE + "obstacle.b = 0.4\nflow.m0 = 1.2\n"), "--out", str(out)])
    d = diff_fields(out / "field.txt", out / "field.txt")
    assert d["phi_max"] == 0.0 and d["grad_max"] == 0.0
    assert d["points"] == len(read_field(out / "field.txt"))


def test_truncation_independence_through_files(tmp_path):
    text = BASE + "obstacle.b = 0.4\nflow.m0 = 0.6\nsolver.newton_tol = 1e-10\n"
    for eps in ("0.1", "0.05"):
        cfg = write_cfg(tmp_path, text + f"truncation.epsilon = {eps}\n", f"e{eps}.cfg")
        assert main(["solve", cfg, "--out", str(tmp_path / eps)]) == 0
    d = diff_fields(tmp_path / "0.1" / "field.txt", tmp_path / "0.05" / "field.txt")
    assert d["grad_max"] <= 10 * 1e-10
    assert d["phi_max"] <= 10 * 1e-10


def test_domain_length_comparison_matches_diagnostic(tmp_path):
    text = BASE.replace("geometry.f_bar = 1.0", "geometry.f_bar = 2.0") + "obstacle.b = 0.8\nsolver.newton_tol = 1e-12\n"
    m0 = 4 * np.pi * 0.84 * LAW.momentum(0.3)
    for L, nz in ((4, 32), (6, 48)):
        body = text.replace("discretization.L = 4", f"discretization.L = {L}").replace(
            "discretization.n_z = 16", f"discretization.n_z = {nz}"
        )
        assert main(["solve", write_cfg(tmp_path, body + f"flow.m0 = {m0!r}\n", f"L{L}.cfg"), "--out", str(tmp_path / f"L{L}")]) == 0
    d = diff_fields(tmp_path / "L4" / "field.txt", tmp_path / "L6" / "field.txt", z_range=(-2.0, 2.0))
    geom = NozzleGeometry(NozzleProfile("straight", f_bar=2.0), ObstacleProfile(-1.0, 1.0, 0.8))
    ref = domain_convergence(geom, build_truncation(LAW, 0.1), m0, 4.0, 1.5, 4, 8, 4, SolverConfig(newton_tol=1e-12))
    # nodal averages versus quadrature values: same quantity up to a modest factor
    volume = 4.0 * np.pi * 4.0 - np.pi * 0.64 * 2 * 35 / 128
    rms_from_diagnostic = ref.discrepancy / np.sqrt(volume)
    assert 1 / 3 <= d["grad_rms"] / rms_from_diagnostic <= 3


def test_incompatible_field_files(tmp_path):
    from nozzleflow.errors import IncompatibleMeshes

    a = tmp_path / "a.txt"
    b = tmp_path / "b.txt"
    a.write_text("0 0 0 0 0 0 0 1\n")
    b.write_text("1 1 1 0 0 0 0 1\n")
    with pytest.raises(IncompatibleMeshes):
        diff_fields(a, b)


def test_sweep_mode(tmp_path):
    text = BASE + "obstacle.b = 0.4\nflow.m0_list = 0.3, 0.6, 1.2\n"
    out = tmp_path / "o"
    assert main(["sweep", write_cfg(tmp_path, text), "--out", str(out)]) == 0
    rows = np.loadtxt(out / "sweep.txt", ndmin=2)
    assert rows.shape == (3, 3)
    assert np.all(np.diff(rows[:, 1]) > 0)
    assert main(["sweep", write_cfg(tmp_path, BASE, "empty.cfg"), "--out", str(out)]) == 2


def test_decay_study_mode(tmp_path):
    text = BASE.replace("discretization.L = 4", "discretization.L = 12").replace(
        "discretization.n_z = 16", "discretization.n_z = 96"
    )
    text += "obstacle.b = 0.4\nflow.m0 = 1.2\nstudy.stations = 3 4 5 6 7 8\n"
    out = tmp_path / "o"
    assert main(["decay-study", write_cfg(tmp_path, text), "--out", str(out)]) == 0
    table = np.loadtxt(out / "decay.txt", ndmin=2)
    assert np.all(np.diff(table[:, 1]) < 0)
    rep = read_report(out / "report.txt")
    assert float(rep["decay.fitted_rate"]) > 0
    bad = text.replace("study.stations = 3 4 5 6 7 8", "study.stations = 3 4 12")
    assert main(["decay-study", write_cfg(tmp_path, bad, "bad.cfg"), "--out", str(out)]) == 2


def test_optimality_study_mode(tmp_path):
    text = BASE.replace("geometry.family = straight", "geometry.family = algebraic").replace(
        "discretization.L = 4", "discretization.L = 24"
    ).replace("discretization.n_z = 16", "discretization.n_z = 96")
    text += "flow.m0 = 1.2\nstudy.stations = 8 12 16 20\n"
    out = tmp_path / "o"
    assert main(["optimality-study", write_cfg(tmp_path, text), "--out", str(out)]) == 0
    assert read_report(out / "report.txt")["optimality.bound_holds"] == "true"
    assert main(["optimality-study", write_cfg(tmp_path, BASE, "s.cfg"), "--out", str(out)]) == 2


def test_tabulated_profile(tmp_path):
    x = np.linspace(-8.0, 8.0, 161)
    np.savetxt(tmp_path / "wall.txt", np.column_stack([x, 1.0 + 0.05 * np.exp(-x * x)]))
    text = BASE.replace("geometry.family = straight", "geometry.family = tabulated")
    text += f"geometry.profile = {tmp_path / 'wall.txt'}\nflow.m0 = 1.0\n"
    assert main(["solve", write_cfg(tmp_path, text), "--out", str(tmp_path / "o")]) == 0
    missing = text.replace("wall.txt", "nope.txt")
    assert main(["solve", write_cfg(tmp_path, missing, "m.cfg"), "--out", str(tmp_path / "o")]) == 2


def test_shipped_configs_validate():
    from pathlib import Path

    paths = sorted((Path(__file__).parent.parent / "configs").glob("*.cfg"))
    assert paths
    for path in paths:
        cfg = load_config(path)
        if cfg["flow.m0_list"]:
            cfg["mode"] = "sweep"
        elif cfg["geometry.family"] == "algebraic":
            cfg["mode"] = "optimality-study"
        cfg.validate()
