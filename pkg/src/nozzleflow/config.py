"""Run configuration: ``section.key = value`` lines with documented defaults."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

MODES = ("solve", "sweep", "decay-study", "optimality-study", "verify")


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


# key -> (parser, default, description)
SCHEMA = {
    "mode": (str, "solve", "pipeline to run; the CLI subcommand overrides it"),
    "seed": (int, 0, "seed for randomized property checks"),
    "gas.gamma": (float, 1.4, "adiabatic exponent, > 1"),
    "truncation.epsilon": (float, 0.1, "subsonic truncation parameter in (0, 1/4)"),
    "geometry.family": (str, "straight", "straight | algebraic | tabulated"),
    "geometry.f_bar": (float, 1.0, "limiting wall radius"),
    "geometry.amplitude": (float, 0.2, "algebraic wall amplitude a"),
    "geometry.decay_l": (float, 1.0, "algebraic wall exponent l"),
    "geometry.K": (float, 4.0, "onset of the far-field regime"),
    "geometry.profile": (str, "", "profile file for the tabulated family (rows x3 f1 [f2])"),
    "obstacle.b": (float, 0.0, "obstacle radius; 0 disables the obstacle"),
    "obstacle.L1": (float, -1.0, "upstream obstacle tip"),
    "obstacle.L2": (float, 1.0, "downstream obstacle tip"),
    "discretization.L": (float, 8.0, "half-length of the computational domain"),
    "discretization.n_r": (int, 8, "radial cells"),
    "discretization.n_theta": (int, 16, "angular cells"),
    "discretization.n_z": (int, 32, "axial cells (target count when graded)"),
    "discretization.grading": (float, 1.0, "axial growth ratio away from the obstacle; 1 is uniform"),
    "flow.m0": (float, 0.0, "mass flux"),
    "flow.m0_list": (_floats, [], "ascending fluxes for sweep mode"),
    "flow.refine_bracket": (_bool, True, "bisect the critical-flux bracket in sweep mode"),
    "solver.newton_tol": (float, 1e-10, "residual target relative to the flux load"),
    "solver.max_newton": (int, 50, "Newton iteration cap"),
    "solver.cg_tol": (float, 1e-8, "inner CG relative tolerance"),
    "solver.armijo_c": (float, 1e-4, "sufficient decrease constant"),
    "solver.backtrack": (float, 0.5, "line search shrink factor"),
    "solver.workers": (_opt_int, None, "threads for element passes; none means sequential"),
    "study.stations": (_floats, [], "slab start abscissae T for the studies"),
    "study.kind": (str, "exponential", "decay model: exponential | algebraic"),
    "study.noise_floor": (float, 0.0, "slab energies below 10x this are excluded from fits"),
    "output.dir": (str, "out", "output directory"),
    "output.vtk": (_bool, False, "also write field.vtk"),
    "output.mesh": (_bool, False, "also write a plain-text mesh dump"),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v[1] for k, v in SCHEMA.items()})
    source: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    def __setitem__(self, key, value):
        self.values[key] = value

    def echo(self):
        return {k: self.values[k] for k in SCHEMA}

    def validate(self):
        v = self.values
        if v["mode"] not in MODES:
            raise ConfigError("mode", f"must be one of {', '.join(MODES)}")
        if not v["gas.gamma"] > 1.0:
            raise ConfigError("gas.gamma", "must be > 1")
        if not 0.0 < v["truncation.epsilon"] < 0.25:
            raise ConfigError("truncation.epsilon", "must lie in (0, 0.25)")
        if v["geometry.family"] not in ("straight", "algebraic", "tabulated"):
            raise ConfigError("geometry.family", "must be straight, algebraic or tabulated")
        if v["geometry.family"] == "tabulated" and not v["geometry.profile"]:
            raise ConfigError("geometry.profile", "required for the tabulated family")
        if not v["geometry.f_bar"] > 0.0:
            raise ConfigError("geometry.f_bar", "must be positive")
        if not v["geometry.decay_l"] > 0.0:
            raise ConfigError("geometry.decay_l", "must be positive")
        if not v["geometry.K"] > 0.0:
            raise ConfigError("geometry.K", "must be positive")
        if v["obstacle.b"] < 0.0:
            raise ConfigError("obstacle.b", "must be >= 0")
        if v["obstacle.b"] > 0.0 and not v["obstacle.L1"] < v["obstacle.L2"]:
            raise ConfigError("obstacle.L2", "must exceed obstacle.L1")
        L = v["discretization.L"]
        reach = max(abs(v["obstacle.L1"]), abs(v["obstacle.L2"])) if v["obstacle.b"] > 0.0 else 0.0
        if not L > reach + 2.0:
            raise ConfigError("discretization.L", f"must exceed {reach + 2.0} (obstacle extent + 2)")
        for key, low in (("discretization.n_r", 4), ("discretization.n_theta", 4), ("discretization.n_z", 8)):
            if v[key] < low:
                raise ConfigError(key, f"must be >= {low}")
        if not v["discretization.grading"] >= 1.0:
            raise ConfigError("discretization.grading", "must be >= 1")
        if v["flow.m0"] < 0.0:
            raise ConfigError("flow.m0", "must be >= 0")
        ms = v["flow.m0_list"]
        if any(m < 0.0 for m in ms) or any(b < a for a, b in zip(ms, ms[1:])):
            raise ConfigError("flow.m0_list", "must be non-negative and ascending")
        if v["mode"] == "sweep" and not ms:
            raise ConfigError("flow.m0_list", "required in sweep mode")
        for key in ("solver.newton_tol", "solver.cg_tol", "solver.armijo_c"):
            if not v[key] > 0.0:
                raise ConfigError(key, "must be positive")
        if not 0.0 < v["solver.backtrack"] < 1.0:
            raise ConfigError("solver.backtrack", "must lie in (0, 1)")
        if v["solver.max_newton"] < 1:
            raise ConfigError("solver.max_newton", "must be >= 1")
        if v["study.kind"] not in ("exponential", "algebraic"):
            raise ConfigError("study.kind", "must be exponential or algebraic")
        st = v["study.stations"]
        if any(b <= a for a, b in zip(st, st[1:])):
            raise ConfigError("study.stations", "must increase strictly")
        if st and (st[0] < -L or st[-1] + 1.0 > L):
            raise ConfigError("study.stations", "slabs [T, T+1] must lie inside [-L, L]")
        if v["mode"] == "optimality-study" and v["geometry.family"] != "algebraic":
            raise ConfigError("geometry.family", "optimality-study needs the algebraic family")
        return self


def parse_config(text, source=None):
    cfg = RunConfig(source=source)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown setting")
        parser = SCHEMA[key][0]
        try:
            cfg[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(key, f"cannot parse {value!r} ({exc})") from None
    return cfg


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))
