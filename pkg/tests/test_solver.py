import numpy as np
import pytest
import scipy.sparse as sp

from nozzleflow.assembly import PotentialField, energy, hessian, layer_flux, residual
from nozzleflow.diagnostics import flux_at
from nozzleflow.errors import Breakdown, LinearSolveFailure, NoConvergence
from nozzleflow.gas import DensityLaw, build_truncation
from nozzleflow.geometry import NozzleGeometry, NozzleProfile, ObstacleProfile
from nozzleflow.mesh import build_mesh
from nozzleflow.solver import SolverConfig, cg_solve, continuation_sweep, solve

LAW = DensityLaw()
TRUNC = build_truncation(LAW, 0.1)
STRAIGHT = NozzleGeometry(NozzleProfile("straight", f_bar=1.0))
OBST = NozzleGeometry(NozzleProfile("straight", f_bar=1.0), ObstacleProfile(-1.0, 1.0, 0.4))


@pytest.fixture(scope="module")
def straight_mesh():
    return build_mesh(STRAIGHT, 4.0, 4, 8, 16)


@pytest.fixture(scope="module")
def obstacle_mesh():
    return build_mesh(OBST, 4.0, 4, 8, 16)


def test_zero_flux_gives_zero_field(obstacle_mesh):
    fld, rep = solve(obstacle_mesh, TRUNC, 0.0)
    assert np.all(fld.phi == 0.0)
    assert rep.iterations == 0


def test_negative_flux_rejected(obstacle_mesh):
    with pytest.raises(ValueError):
        solve(obstacle_mesh, TRUNC, -1.0)


def test_straight_nozzle_recovers_uniform_flow(straight_mesh):
    m = straight_mesh
    q = 0.4
    m0 = np.pi * LAW.momentum(q)
    fld, rep = solve(m, TRUNC, m0, SolverConfig(newton_tol=1e-12))
    exact = q * (m.nodes[:, 2] + m.L)
    assert np.max(np.abs(fld.phi - exact)) <= 1e-10
    assert rep.converged_relative <= 1e-12


def test_obstacle_flow_conserves_flux(obstacle_mesh):
    m0 = np.pi * 0.84 * LAW.momentum(0.3)
    fld, rep = solve(obstacle_mesh, TRUNC, m0, SolverConfig(newton_tol=1e-12))
    assert rep.max_speed > 0.3
    assert not rep.truncation_active
    # the weak-form layer fluxes are conserved to solver tolerance
    for k in range(obstacle_mesh.n_z):
        assert layer_flux(fld, TRUNC, k) == pytest.approx(m0, rel=1e-10)
    # face quadrature is exact away from the obstacle and O(h^2) across it
    assert flux_at(fld, TRUNC, -3.0) == pytest.approx(m0, rel=1e-10)
    assert flux_at(fld, TRUNC, 0.0) == pytest.approx(m0, rel=0.1)


def test_energy_decreases_monotonically(obstacle_mesh):
    fld, rep = solve(obstacle_mesh, TRUNC, 0.6 * np.pi, initial=np.zeros(obstacle_mesh.n_nodes))
    assert rep.iterations >= 2
    assert np.all(np.diff(rep.energy_history) < 0.0)
    assert rep.energy_history[-1] == pytest.approx(energy(fld, TRUNC, 0.6 * np.pi), abs=1e-10)


def test_minimizer_is_independent_of_start(obstacle_mesh):
    m0 = 0.5 * np.pi
    cfg = SolverConfig(newton_tol=1e-12)
    a, _ = solve(obstacle_mesh, TRUNC, m0, cfg)
    rng = np.random.default_rng(0)
    start = rng.standard_normal(obstacle_mesh.n_nodes)
    b, _ = solve(obstacle_mesh, TRUNC, m0, cfg, initial=start)
    assert np.max(np.abs(a.phi - b.phi)) <= 1e-9


def test_cg_on_simple_matrices():
    x, it = cg_solve(sp.identity(5, format="csr"), np.arange(5.0))
    assert it == 1 and np.allclose(x, np.arange(5.0))
    d = np.array([1.0, 4.0, 9.0])
    x, it = cg_solve(sp.diags(d).tocsr(), np.ones(3))
    assert it == 1 and np.allclose(x, 1.0 / d)
    x, it = cg_solve(np.eye(3), np.zeros(3))
    assert it == 0 and np.all(x == 0.0)


def test_cg_matches_dense_solve_on_laplacian(obstacle_mesh):
    A = hessian(PotentialField.zeros(obstacle_mesh), TRUNC)
    b = -residual(PotentialField.zeros(obstacle_mesh), TRUNC, 1.0)
    x, _ = cg_solve(A, b, tol=1e-12)
    ref = np.linalg.solve(A.toarray(), b)
    assert np.linalg.norm(x - ref) <= 1e-8 * np.linalg.norm(ref)


def test_cg_failures():
    with pytest.raises(Breakdown):
        cg_solve(np.diag([1.0, -1.0]), np.ones(2))
    with pytest.raises(Breakdown):
        cg_solve(np.array([[1.0, 2.0], [2.0, 1.0]]), np.array([1.0, -1.0]))
    rng = np.random.default_rng(1)
    q, _ = np.linalg.qr(rng.standard_normal((50, 50)))
    A = q @ np.diag(np.logspace(0, 8, 50)) @ q.T
    with pytest.raises(LinearSolveFailure):
        cg_solve(A, np.ones(50), tol=1e-14, maxiter=3)


def test_newton_budget_exhausted(obstacle_mesh):
    with pytest.raises(NoConvergence) as info:
        solve(obstacle_mesh, TRUNC, 0.5 * np.pi, SolverConfig(newton_tol=1e-14, max_newton=1),
              initial=np.zeros(obstacle_mesh.n_nodes))
    assert info.value.report.iterations == 1


@pytest.mark.parametrize(
    "kw", [{"newton_tol": 0.0}, {"backtrack": 1.0}, {"max_newton": 0}, {"armijo_c": -1.0}, {"cg_tol": -1e-3}]
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_sweep_from_zero(obstacle_mesh):
    res = continuation_sweep(obstacle_mesh, TRUNC, [0.0])
    assert res.rows[0][1] == 0.0 and res.truncated_at is None


def test_sweep_rejects_descending(obstacle_mesh):
    with pytest.raises(ValueError):
        continuation_sweep(obstacle_mesh, TRUNC, [1.0, 0.5])


def test_small_flux_scales_linearly(obstacle_mesh):
    res = continuation_sweep(obstacle_mesh, TRUNC, [1e-3, 2e-3, 1e-2, 1e-1, 1.0])
    m0, Q = np.array([r[0] for r in res.rows]), np.array([r[1] for r in res.rows])
    assert Q[1] / Q[0] == pytest.approx(2.0, rel=0.05)
    ratio = Q[:4] / m0[:4]
    assert np.ptp(ratio) <= 0.05 * ratio.mean()
    assert np.all(np.diff(Q) > 0.0)


def test_sweep_brackets_the_truncation(obstacle_mesh):
    res = continuation_sweep(obstacle_mesh, TRUNC, np.linspace(0.1, 1.0, 10) * np.pi)
    assert res.truncated_at is not None
    lo, hi = res.bracket
    assert lo < hi <= res.truncated_at
    assert hi - lo <= 0.02 * hi
