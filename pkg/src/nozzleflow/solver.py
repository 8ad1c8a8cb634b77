"""Damped Newton minimization of the discrete energy and flux continuation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    PotentialField,
    energy,
    energy_change,
    hessian,
    quadrature_state,
    residual,
)
from .errors import Breakdown, LinearSolveFailure, NoConvergence

MIN_STEP = 2.0**-30


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton: int = 50
    cg_tol: float = 1e-8
    cg_max: int | None = None  # default 20 * sqrt(dof)
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    workers: int | None = None  # None or 1: sequential element passes

    def __post_init__(self):
        for name in ("newton_tol", "cg_tol", "armijo_c"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack must lie in (0, 1)")
        if self.max_newton < 1:
            raise ValueError("max_newton must be >= 1")


@dataclass
class SolveReport:
    iterations: int = 0
    residual_norm: float = 0.0
    load_norm: float = 0.0
    energy_history: list = field(default_factory=list)
    line_search_counts: list = field(default_factory=list)
    cg_iterations: int = 0
    truncation_active: bool = False
    max_speed: float = 0.0

    @property
    def converged_relative(self):
        return self.residual_norm / self.load_norm if self.load_norm else 0.0


def cg_solve(A, rhs, tol=1e-8, maxiter=None, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, iterations)``.  Raises Breakdown on a direction with
    non-positive curvature and LinearSolveFailure if ``maxiter`` is hit.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = len(rhs)
    maxiter = maxiter or max(100, int(20 * np.sqrt(n)))
    diag = A.diagonal() if hasattr(A, "diagonal") else np.diag(A)
    if np.any(diag <= 0.0):
        raise Breakdown("non-positive diagonal entry")
    inv_d = 1.0 / diag
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = rhs - A @ x
    target = tol * np.linalg.norm(rhs)
    if np.linalg.norm(r) <= target:
        return x, 0
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        curv = p @ Ap
        if curv <= 0.0:
            raise Breakdown(f"non-positive curvature {curv:.3g} at CG iteration {it}")
        a = rz / curv
        x += a * p
        r -= a * Ap
        if np.linalg.norm(r) <= target:
            return x, it
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise LinearSolveFailure(f"CG did not reach {tol:g} in {maxiter} iterations")


def initial_guess(mesh, trunc, m0):
    """Uniform axial flow q0 (x3 + L) carrying m0 through the mean section."""
    if m0 == 0.0:
        return np.zeros(mesh.n_nodes)
    mean_area = mesh.volume / (2.0 * mesh.L)
    q0 = trunc.invert_momentum(m0 / mean_area)
    phi = q0 * (mesh.nodes[:, 2] + mesh.L)
    phi[mesh.dirichlet_mask] = 0.0
    return phi


def solve(mesh, trunc, m0, config=None, initial=None):
    """Minimize the discrete energy; returns ``(PotentialField, SolveReport)``."""
    cfg = config or SolverConfig()
    if m0 < 0.0:
        raise ValueError("m0 must be >= 0")
    phi = initial_guess(mesh, trunc, m0) if initial is None else np.array(initial, dtype=float)
    phi[mesh.dirichlet_mask] = 0.0
    fld = PotentialField(mesh, phi)
    report = SolveReport(load_norm=m0 * float(np.linalg.norm(mesh.outflow_load)))
    tol = cfg.newton_tol * report.load_norm
    cg_max = cfg.cg_max or max(100, int(20 * np.sqrt(mesh.n_nodes)))

    state = quadrature_state(fld, trunc, cfg.workers)
    e = energy(fld, trunc, m0, state)
    report.energy_history.append(e)
    for it in range(cfg.max_newton + 1):
        r = residual(fld, trunc, m0, state, cfg.workers)
        report.residual_norm = float(np.linalg.norm(r))
        if report.residual_norm <= tol:
            break
        if it == cfg.max_newton:
            _finish(report, state, trunc)
            raise NoConvergence(f"no convergence in {cfg.max_newton} Newton steps", report)
        A = hessian(fld, trunc, state, cfg.workers)
        step, n_cg = cg_solve(A, -r, cfg.cg_tol, cg_max)
        report.cg_iterations += n_cg
        slope = float(r @ step)
        if slope >= 0.0:
            raise LinearSolveFailure("Newton direction is not a descent direction")
        alpha, tries = 1.0, 0
        while True:
            tries += 1
            de = energy_change(fld, step, alpha, trunc, m0, state)
            if de <= cfg.armijo_c * alpha * slope:
                break
            alpha *= cfg.backtrack
            if alpha < MIN_STEP:
                _finish(report, state, trunc)
                raise NoConvergence("line search step fell below 2^-30", report)
        fld = PotentialField(mesh, fld.phi + alpha * step)
        state = quadrature_state(fld, trunc, cfg.workers)
        e += de
        report.energy_history.append(e)
        report.line_search_counts.append(tries)
        report.iterations = it + 1
    _finish(report, state, trunc)
    return fld, report


def _finish(report, state, trunc):
    smax = float(state.speed_sq.max())
    report.max_speed = float(np.sqrt(smax))
    report.truncation_active = smax >= trunc.lo


@dataclass
class SweepResult:
    rows: list  # (m0, Q, SolveReport) for accepted solves, ascending m0
    fields: list
    truncated_at: float | None = None  # first flux where the truncation fired
    bracket: tuple | None = None  # (m_lo, m_hi) around the critical flux


def continuation_sweep(mesh, trunc, m0_list, config=None, refine=True, rel_width=0.02):
    """Solve along ascending fluxes, warm-starting from the scaled previous field.

    Stops at the first solve whose truncation is active; with ``refine`` the
    gap between the last accepted and that flux is bisected until its width
    is at most ``rel_width * m_hi``.
    """
    m0_list = [float(m) for m in m0_list]
    if any(b < a for a, b in zip(m0_list, m0_list[1:])):
        raise ValueError("m0_list must be ascending")
    out = SweepResult([], [])
    prev_m, prev_phi = 0.0, None

    def warm(m):
        if prev_phi is None or prev_m == 0.0:
            return None
        return prev_phi * (m / prev_m)

    for m in m0_list:
        fld, rep = solve(mesh, trunc, m, config, warm(m))
        if rep.truncation_active:
            out.truncated_at = m
            break
        out.rows.append((m, rep.max_speed, rep))
        out.fields.append(fld)
        prev_m, prev_phi = m, fld.phi
    if out.truncated_at is None or not out.rows:
        return out
    lo, hi = prev_m, out.truncated_at
    if refine:
        lo_phi = prev_phi
        while hi - lo > rel_width * hi:
            mid = 0.5 * (lo + hi)
            fld, rep = solve(mesh, trunc, mid, config, lo_phi * (mid / lo) if lo > 0 else None)
            if rep.truncation_active:
                hi = mid
            else:
                lo, lo_phi = mid, fld.phi
    out.bracket = (lo, hi)
    return out
