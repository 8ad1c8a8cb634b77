"""Command line entry point: ``nozzleflow MODE CONFIG [--sequential] [--out DIR]``."""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .assembly import PotentialField, energy, hessian, layer_flux, residual
from .config import MODES, load_config
from .diagnostics import (
    decay_report,
    far_state,
    flux_at,
    max_speed,
    optimality_lower_bound,
    poincare_constant,
)
from .errors import ConfigError, NozzleFlowError
from .gas import DensityLaw, GasModel, build_truncation
from .geometry import NozzleGeometry, NozzleProfile, ObstacleProfile, load_profile
from .io import write_field, write_mesh, write_report, write_vtk
from .mesh import build_mesh, quality_report
from .solver import SolverConfig, continuation_sweep, solve


@dataclass
class RunManifest:
    mode: str
    config: dict
    versions: dict
    timings: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)  # name -> sha256
    passed: bool = True

    def to_json(self):
        return json.dumps(
            {
                "mode": self.mode,
                "config": self.config,
                "versions": self.versions,
                "timings": self.timings,
                "outputs": self.outputs,
                "passed": self.passed,
            },
            indent=2,
            sort_keys=True,
        )


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_geometry(cfg):
    fam = cfg["geometry.family"]
    obstacle = None
    if fam == "tabulated":
        try:
            wall, obstacle = load_profile(cfg["geometry.profile"])
        except (OSError, ValueError) as exc:
            raise ConfigError("geometry.profile", str(exc)) from None
    else:
        wall = NozzleProfile(
            kind=fam,
            f_bar=cfg["geometry.f_bar"],
            amplitude=cfg["geometry.amplitude"] if fam == "algebraic" else 0.0,
            decay_l=cfg["geometry.decay_l"],
            K=cfg["geometry.K"],
        )
    if cfg["obstacle.b"] > 0.0:
        obstacle = ObstacleProfile(cfg["obstacle.L1"], cfg["obstacle.L2"], cfg["obstacle.b"])
    return NozzleGeometry(wall, obstacle)


def solver_config(cfg, sequential):
    return SolverConfig(
        newton_tol=cfg["solver.newton_tol"],
        max_newton=cfg["solver.max_newton"],
        cg_tol=cfg["solver.cg_tol"],
        armijo_c=cfg["solver.armijo_c"],
        backtrack=cfg["solver.backtrack"],
        workers=None if sequential else cfg["solver.workers"],
    )


def _solve_section(rep):
    return {
        "iterations": rep.iterations,
        "residual_norm": rep.residual_norm,
        "relative_residual": rep.converged_relative,
        "cg_iterations": rep.cg_iterations,
        "line_search_counts": rep.line_search_counts or "none",
        "energy_final": rep.energy_history[-1],
        "energy_history": rep.energy_history,
        "max_speed": rep.max_speed,
        "truncation_active": rep.truncation_active,
    }


def _default_stations(mesh, geom):
    start = (geom.obstacle.L2 if geom.obstacle is not None else 0.0) + 2.0
    stop = mesh.L - 2.0
    return [float(t) for t in np.arange(np.ceil(start), np.floor(stop)) if mesh.has_station(t) and mesh.has_station(t + 1)]


def run(cfg, out_dir=None, sequential=False):
    """Execute the configured pipeline and write its outputs; returns a RunManifest."""
    cfg.validate()
    mode = cfg["mode"]
    out = Path(out_dir or cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        mode=mode,
        config=cfg.echo(),
        versions={
            "nozzleflow": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    )
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        manifest.timings[name] = now - clock
        clock = now

    law = DensityLaw(GasModel(cfg["gas.gamma"]))
    trunc = build_truncation(law, cfg["truncation.epsilon"])
    geom = build_geometry(cfg)
    mesh = build_mesh(
        geom,
        cfg["discretization.L"],
        cfg["discretization.n_r"],
        cfg["discretization.n_theta"],
        cfg["discretization.n_z"],
        grading=cfg["discretization.grading"],
    )
    qual = quality_report(mesh)
    lap("setup")
    scfg = solver_config(cfg, sequential)
    m0 = cfg["flow.m0"]
    sections = {
        "run": {"mode": mode, "config": cfg.source or "-"},
        "truncation": {"epsilon": trunc.epsilon, "lambda": trunc.lam, "Lambda": trunc.Lam, "plateau": trunc.plateau},
        "geometry": {"family": cfg["geometry.family"], "f_bar": geom.f_bar, "gap_constant": geom.gap_constant},
        "mesh": {
            "resolution": mesh.resolution,
            "nodes": mesh.n_nodes,
            "hexes": mesh.n_elements,
            "volume": mesh.volume,
            "min_jacobian": qual.min_jacobian,
            "max_aspect": qual.max_aspect,
        },
    }
    written = []

    def emit(name, writer):
        path = out / name
        writer(path)
        written.append(path)

    if mode == "sweep":
        sw = continuation_sweep(mesh, trunc, cfg["flow.m0_list"], scfg, refine=cfg["flow.refine_bracket"])
        lap("sweep")

        def table(path):
            with open(path, "w") as fh:
                fh.write("# m0 Q iterations\n")
                for m, q, rep in sw.rows:
                    fh.write(f"{m:.17g} {q:.17g} {rep.iterations}\n")

        emit("sweep.txt", table)
        sections["sweep"] = {
            "accepted": len(sw.rows),
            "truncated_at": "none" if sw.truncated_at is None else sw.truncated_at,
            "bracket": "none" if sw.bracket is None else sw.bracket,
        }
    else:
        if mode == "verify" and m0 == 0.0:
            m0 = geom.certificate.area_min * law.momentum(0.3)
        fld, rep = solve(mesh, trunc, m0, scfg)
        lap("solve")
        sections["solve"] = {"m0": m0, **_solve_section(rep)}
        emit("field.txt", lambda p: write_field(p, fld, trunc))
        if cfg["output.vtk"]:
            emit("field.vtk", lambda p: write_vtk(p, fld, trunc))
        if cfg["output.mesh"]:
            emit("mesh.txt", lambda p: write_mesh(p, mesh))
        sections["flux"] = {f"x3={t:g}": flux_at(fld, trunc, t) for t in mesh.z[:: max(1, mesh.n_z // 8)]}
        if mode in ("decay-study", "optimality-study"):
            stations = cfg["study.stations"] or _default_stations(mesh, geom)
            far = far_state(geom, law, m0)
            sections["far_field"] = {"q_bar": far.q_bar, "rho_bar": far.rho_bar}
            if mode == "decay-study":
                lam_p = poincare_constant(mesh, stations[-1])
                beta = trunc.lam / max(trunc.Lam, lam_p) ** 2
                dr = decay_report(fld, far, stations, cfg["study.kind"], cfg["study.noise_floor"], beta)
                emit("decay.txt", lambda p: p.write_text(dr.table()))
                fit = dr.fitted_rate
                sections["decay"] = {
                    "kind": cfg["study.kind"],
                    "poincare_constant": lam_p,
                    "predicted_beta": beta,
                    "fitted_rate": "noise floor" if fit is None else fit.rate,
                    "ci": "none" if fit is None else fit.ci,
                    "r_squared": "none" if fit is None else fit.r_squared,
                    "model_mismatch": "none" if fit is None else fit.model_mismatch,
                }
            else:
                opt = optimality_lower_bound(fld, far, geom, trunc, m0, stations)

                def table(path):
                    with open(path, "w") as fh:
                        fh.write("# x3 deficit flux_error lower_bound sup_dev\n")
                        for row in zip(opt.stations, opt.deficit, opt.flux_error, opt.lower_bound, opt.sup_dev):
                            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

                emit("optimality.txt", table)
                sections["optimality"] = {
                    "lipschitz": opt.lipschitz,
                    "sup_dev_exponent": "none" if opt.exponent is None else opt.exponent.rate,
                    "bound_holds": bool(np.all(opt.lower_bound <= opt.sup_dev)),
                }
            lap("diagnostics")
        if mode == "verify":
            checks = verify_checks(mesh, geom, law, trunc, m0, fld, rep, cfg["seed"])
            sections["verify"] = {name: "pass" if ok else f"FAIL ({detail})" for name, (ok, detail) in checks.items()}
            manifest.passed = all(ok for ok, _ in checks.values())
            lap("verify")
    emit("report.txt", lambda p: write_report(p, sections))
    manifest.outputs = {p.name: _sha256(p) for p in written}
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
    return manifest


def verify_checks(mesh, geom, law, trunc, m0, fld, rep, seed):
    """Property checks on the configured case; name -> (passed, detail)."""
    checks = {}
    rng = np.random.default_rng(seed)
    qual = quality_report(mesh)
    checks["positive_jacobian"] = (qual.min_jacobian > 0.0, f"min {qual.min_jacobian:.3g}")
    if geom.axisymmetric:
        errs = [abs(mesh.section(t).area / geom.cross_section_area(t) - 1.0) for t in mesh.z[:: max(1, mesh.n_z // 8)]]
        checks["section_area"] = (max(errs) <= 1e-10, f"max rel err {max(errs):.3g}")
    hist = np.array(rep.energy_history)
    checks["energy_decreasing"] = (bool(np.all(np.diff(hist) <= 0.0)), "history not monotone")
    lf = np.array([layer_flux(fld, trunc, k) for k in range(mesh.n_z)])
    ferr = float(np.abs(lf - m0).max()) if m0 > 0 else float(np.abs(lf).max())
    checks["flux_conservation"] = (ferr <= 1e-6 * max(m0, 1.0), f"max error {ferr:.3g}")
    Q = max_speed(fld)
    checks["subsonic"] = (Q**2 < trunc.lo, f"Q^2 = {Q**2:.4g}")
    # gradient check at a perturbed state
    phi = fld.phi * (1.0 + 0.1 * rng.standard_normal(mesh.n_nodes))
    phi[mesh.dirichlet_mask] = 0.0
    probe = PotentialField(mesh, phi)
    r = residual(probe, trunc, m0)
    worst = 0.0
    for _ in range(5):
        d = rng.standard_normal(mesh.n_nodes)
        d[mesh.dirichlet_mask] = 0.0
        h = 1e-5
        fd = (energy(PotentialField(mesh, phi + h * d), trunc, m0) - energy(PotentialField(mesh, phi - h * d), trunc, m0)) / (2 * h)
        worst = max(worst, abs(fd - r @ d) / abs(r @ d))
    checks["gradient_fd"] = (worst <= 1e-6, f"rel err {worst:.3g}")
    A = hessian(probe, trunc)
    asym = abs(A - A.T).max() / abs(A).max()
    checks["hessian_symmetric"] = (asym <= 1e-12, f"asymmetry {asym:.3g}")
    if geom.obstacle is None and geom.wall.kind == "straight":
        q = law.invert_momentum_subsonic(m0 / (np.pi * geom.f_bar**2))
        dev = float(np.abs(fld.gradients() - [0.0, 0.0, q]).max())
        checks["exact_linear_solution"] = (dev <= 1e-9, f"max dev {dev:.3g}")
    return checks


def main(argv=None):
    ap = argparse.ArgumentParser(prog="nozzleflow", description=__doc__)
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("config", help="path to a 'section.key = value' config file")
    ap.add_argument("--sequential", action="store_true", help="force the deterministic single-threaded path")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg["mode"] = args.mode
        manifest = run(cfg, args.out, args.sequential)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NozzleFlowError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if not manifest.passed:
        print("verification failed; see report.txt", file=sys.stderr)
        return 1
    print(f"{args.mode}: wrote {len(manifest.outputs)} files to {args.out or cfg['output.dir']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
