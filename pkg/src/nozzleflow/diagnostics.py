"""Measurements on computed fields: flux, speed, far-field decay and related checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import stats
from scipy.sparse.linalg import splu

from .assembly import PotentialField, _local_values
from .errors import IncompatibleMeshes, InconsistentFlux, NoiseFloor, StationOutOfRange, Supersonic
from .mesh import GAUSS_2D, build_mesh


@dataclass(frozen=True)
class FarField:
    f_bar: float
    q_bar: float
    rho_bar: float

    @property
    def area(self):
        return np.pi * self.f_bar**2

    @property
    def flux(self):
        return self.rho_bar * self.q_bar * self.area


@dataclass(frozen=True)
class RateFit:
    rate: float
    ci: tuple
    r_squared: float
    rival_r_squared: float
    n_points: int
    model_mismatch: bool


@dataclass(frozen=True)
class DecayReport:
    stations: np.ndarray
    slab_energy: np.ndarray
    sup_dev: np.ndarray
    fitted_rate: RateFit | None
    predicted_beta: float | None

    def table(self):
        lines = ["# T slab_energy sup_dev"]
        lines += [f"{t:.17g} {e:.17g} {s:.17g}" for t, e, s in zip(self.stations, self.slab_energy, self.sup_dev)]
        return "\n".join(lines) + "\n"


def _side_gradients(field, elements, grads):
    return np.einsum("fqai,fa->fqi", grads, _local_values(field.phi, field.mesh.hexes[elements]))


def _section_gradients(field, t):
    sec = field.mesh.section(t)
    sides = []
    if sec.above is not None:
        sides.append(_side_gradients(field, sec.above, sec.above_grads))
    if sec.below is not None:
        sides.append(_side_gradients(field, sec.below, sec.below_grads))
    return sec, sides


def flux_at(field, trunc, t):
    """Face-quadrature flux of H(|grad phi|^2) d3 phi through the lattice plane ``t``.

    Interior planes average the traces from the two adjacent layers.
    """
    sec, sides = _section_gradients(field, t)
    vals = []
    for g in sides:
        H = np.asarray(trunc.H(np.einsum("fqi,fqi->fq", g, g)))
        vals.append(np.sum(sec.weights * H * g[..., 2]))
    return float(np.mean(vals))


def max_speed(field):
    g = field.gradients()
    return float(np.sqrt(np.einsum("eqi,eqi->eq", g, g).max()))


def far_state(geom, law, m0):
    """Far-field state from rho(q^2) q * pi f_bar^2 = m0."""
    f_bar = geom.f_bar
    m = m0 / (np.pi * f_bar**2)
    if m >= 1.0:
        raise Supersonic(f"m0 = {m0} exceeds the subsonic capacity pi f_bar^2 = {np.pi * f_bar**2}")
    q = law.invert_momentum_subsonic(m)
    return FarField(f_bar=f_bar, q_bar=q, rho_bar=law.density(q * q))


def slab_deviation(field, far, T):
    """Energy and sup over quadrature points of |grad phi - (0, 0, q_bar)| on the slab [T, T+1]."""
    mesh = field.mesh
    el = mesh.element_slab(T, T + 1.0)
    dev = field.gradients(el) - np.array([0.0, 0.0, far.q_bar])
    d2 = np.einsum("eqi,eqi->eq", dev, dev)
    return float(np.sum(mesh.quadrature.weights[el] * d2)), float(np.sqrt(d2.max()))


def section_sup_deviation(field, far, t):
    """Sup of |grad phi - (0, 0, q_bar)| over the face quadrature points of the section at t."""
    _, sides = _section_gradients(field, t)
    return float(max(np.linalg.norm(g - [0.0, 0.0, far.q_bar], axis=-1).max() for g in sides))


def _fit(x, y):
    res = stats.linregress(x, y)
    tq = stats.t.ppf(0.975, len(x) - 2) if len(x) > 2 else np.inf
    return res.slope, tq * res.stderr, res.rvalue**2


def _usable(stations, energies, noise_floor):
    t = np.asarray(stations, dtype=float)
    e = np.asarray(energies, dtype=float)
    keep = e > 10.0 * noise_floor
    if keep.sum() < 5:
        raise NoiseFloor(f"only {int(keep.sum())} stations above the noise floor {noise_floor:.3g}")
    return t[keep], e[keep]


def fit_exponential_rate(stations, energies, noise_floor=0.0):
    """Rate d from energy ~ exp(-2 d T); CI is the 95% t-interval."""
    t, e = _usable(stations, energies, noise_floor)
    slope, half, r2 = _fit(t, np.log(e))
    if slope >= 0.0 or not np.isfinite(slope):
        raise NoiseFloor("energies do not decrease")
    pos = t > 0.0
    rival = _fit(np.log(t[pos]), np.log(e[pos]))[2] if pos.sum() >= 3 else np.nan
    return RateFit(-slope / 2, (-(slope + half) / 2, -(slope - half) / 2), r2, rival, len(t), r2 < 0.98 or bool(rival > r2))


def fit_algebraic_rate(stations, energies, noise_floor=0.0):
    """Exponent l from energy ~ T^(-2 l)."""
    t, e = _usable(stations, energies, noise_floor)
    if np.any(t <= 0.0):
        raise ValueError("algebraic fit needs positive stations")
    slope, half, r2 = _fit(np.log(t), np.log(e))
    if slope >= 0.0 or not np.isfinite(slope):
        raise NoiseFloor("energies do not decrease")
    _, _, rival = _fit(t, np.log(e))
    return RateFit(-slope / 2, (-(slope + half) / 2, -(slope - half) / 2), r2, rival, len(t), r2 < 0.98 or bool(rival > r2))


def fit_power(x, y):
    """Exponent p of y ~ x^(-p) by log-log least squares (no noise floor)."""
    slope, half, r2 = _fit(np.log(x), np.log(y))
    return RateFit(-slope, (-(slope + half), -(slope - half)), r2, np.nan, len(x), r2 < 0.98)


def decay_report(field, far, stations, kind="exponential", noise_floor=0.0, predicted_beta=None):
    stations = np.asarray(stations, dtype=float)
    if np.any(np.diff(stations) <= 0.0):
        raise ValueError("stations must increase strictly")
    pairs = [slab_deviation(field, far, T) for T in stations]
    energies = np.array([p[0] for p in pairs])
    sups = np.array([p[1] for p in pairs])
    fitter = fit_exponential_rate if kind == "exponential" else fit_algebraic_rate
    try:
        fit = fitter(stations, energies, noise_floor)
    except NoiseFloor:
        fit = None
    return DecayReport(stations, energies, sups, fit, predicted_beta)


@dataclass(frozen=True)
class OptimalityReport:
    stations: np.ndarray
    deficit: np.ndarray  # rho_bar q_bar (|Sigma_x3| - pi f_bar^2)
    flux_error: np.ndarray
    lower_bound: np.ndarray
    sup_dev: np.ndarray
    lipschitz: float
    exponent: RateFit | None


def optimality_lower_bound(field, far, geom, trunc, m0, stations, flux_tol=1e-2):
    """Certified per-station lower bound on the section sup deviation.

    On each section the flux identity gives
    ``integral (H(|p|^2) p_3 - rho_bar q_bar) = m0 + delta - rho_bar q_bar |Sigma|``
    with ``delta`` the discrete flux error, and the integrand is Lipschitz in p
    with constant ``max (H + 2 |H'| s)`` over the speeds that occur.
    """
    stations = np.asarray(stations, dtype=float)
    Q2 = max(max_speed(field), far.q_bar) ** 2
    s = np.linspace(0.0, Q2, 2001)
    lip = float(np.max(np.asarray(trunc.H(s)) + 2.0 * np.abs(trunc.dH(s)) * s))
    deficit, ferr, lower, sups = [], [], [], []
    for t in stations:
        area = field.mesh.section(t).area
        flux = flux_at(field, trunc, t)
        if abs(flux - m0) > flux_tol * m0:
            raise InconsistentFlux(f"flux {flux:.6g} at x3 = {t} differs from m0 = {m0:.6g}")
        d = far.rho_bar * far.q_bar * (area - far.area)
        deficit.append(d)
        ferr.append(flux - m0)
        lower.append(max(0.0, (abs(d) - abs(flux - m0)) / (area * lip)))
        sups.append(section_sup_deviation(field, far, t))
    sups = np.array(sups)
    exponent = fit_power(stations, sups) if len(stations) >= 3 and np.all(sups > 0) else None
    return OptimalityReport(stations, np.array(deficit), np.array(ferr), np.array(lower), sups, lip, exponent)


def weight_function(x3, t1, t2, beta, h):
    """Piecewise exponential weight: 1 outside, e^(beta h) on [t1, t2], exponential ramps of width h."""
    x = np.asarray(x3, dtype=float)
    z = np.ones_like(x)
    up = (x > t1 - h) & (x <= t1)
    z[up] = np.exp(beta * (x[up] - t1 + h))
    z[(x > t1) & (x <= t2)] = np.exp(beta * h)
    down = (x > t2) & (x <= t2 + h)
    z[down] = np.exp(beta * h - beta * (x[down] - t2))
    return z


@dataclass(frozen=True)
class SlabInequality:
    lhs: float
    rhs: float
    beta: float
    Lam_eff: float

    @property
    def residual(self):
        return self.lhs - self.rhs


def weighted_slab_check(field1, field2, trunc, t1, t2, h, beta=None, Lam_eff=None):
    """Both sides of lambda int (zeta - 1)|grad Phi|^2 <= Lam^2 beta int_ramps zeta |grad Phi|^2.

    ``Phi = phi1 - phi2``.  ``Lam_eff`` defaults to ``max(Lambda, Lambda_P)``
    with the section Poincare constant at ``t1``; ``beta`` defaults to
    ``lambda / Lam_eff^2``.
    """
    mesh = field1.mesh
    if field2.mesh is not mesh:
        raise IncompatibleMeshes("both fields must live on the same mesh")
    if t1 - h < -mesh.L or t2 + h > mesh.L or not t1 < t2 or h < 0:
        raise StationOutOfRange("weight support must lie inside [-L, L]")
    if Lam_eff is None:
        Lam_eff = max(trunc.Lam, poincare_constant(mesh, mesh.z[np.argmin(np.abs(mesh.z - t1))]))
    if beta is None:
        beta = trunc.lam / Lam_eff**2
    quad = mesh.quadrature
    g = PotentialField(mesh, field1.phi - field2.phi).gradients()
    d2 = np.einsum("eqi,eqi->eq", g, g)
    x3 = quad.points[..., 2]
    zeta = weight_function(x3, t1, t2, beta, h)
    ramps = ((x3 > t1 - h) & (x3 <= t1)) | ((x3 > t2) & (x3 <= t2 + h))
    lhs = trunc.lam * np.sum(quad.weights * (zeta - 1.0) * d2)
    rhs = Lam_eff**2 * beta * np.sum(quad.weights * np.where(ramps, zeta, 0.0) * d2)
    return SlabInequality(float(lhs), float(rhs), float(beta), float(Lam_eff))


def linear_field(mesh, q):
    """Uniform axial flow q (x3 + L) as a PotentialField."""
    phi = q * (mesh.nodes[:, 2] + mesh.L)
    phi[mesh.dirichlet_mask] = 0.0
    return PotentialField(mesh, phi)


def section_matrices(mesh, t):
    """Q1 stiffness and mass matrices of the cross section at lattice plane t."""
    k = mesh.station_index(t)
    el = mesh.layer_elements(k) if k < mesh.n_z else mesh.layer_elements(k - 1)
    bottom = [0, 1, 2, 3] if k < mesh.n_z else [4, 5, 6, 7]
    ids = mesh.hexes[el][:, bottom]
    cyl = mesh.corners[el][:, bottom, :2]  # (r, theta)
    sgn = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    f = 1.0 + GAUSS_2D[:, None, :] * sgn[None]
    N = 0.25 * f.prod(axis=2)
    dN = np.stack([0.25 * sgn[:, 0] * f[..., 1], 0.25 * sgn[:, 1] * f[..., 0]], axis=-1)  # (q, a, 2)
    rt = np.einsum("qa,eac->eqc", N, cyl)
    drt = np.einsum("qaj,eac->eqcj", dN, cyl)
    R, T = rt[..., 0], rt[..., 1]
    c, s = np.cos(T), np.sin(T)
    dR, dT = drt[..., 0, :], drt[..., 1, :]
    J = np.stack([dR * c[..., None] - (R * s)[..., None] * dT, dR * s[..., None] + (R * c)[..., None] * dT], axis=-2)
    det = np.linalg.det(J)
    G = np.einsum("eqji,qaj->eqai", np.linalg.inv(J), dN)
    Ke = np.einsum("eq,eqai,eqbi->eab", det, G, G)
    Me = np.einsum("eq,qa,qb->eab", det, N, N)
    rows = np.repeat(ids, 4, axis=1).ravel()
    cols = np.tile(ids, (1, 4)).ravel()
    nodes, inv = np.unique(np.concatenate([rows, cols]), return_inverse=True)
    r, cc = inv[: len(rows)], inv[len(rows):]
    n = len(nodes)
    K = sp.csr_matrix((Ke.ravel(), (r, cc)), shape=(n, n))
    M = sp.csr_matrix((Me.ravel(), (r, cc)), shape=(n, n))
    return K, M


def poincare_constant(mesh, t, tol=1e-12, max_iter=2000, seed=0):
    """Section Poincare constant 1 / sqrt(mu_2) by shifted inverse iteration.

    mu_2 is the smallest nonzero Neumann eigenvalue of the section's Q1
    Laplacian; constants are projected out in the mass inner product.
    """
    K, M = section_matrices(mesh, t)
    n = K.shape[0]
    ones = np.ones(n)
    m1 = M @ ones
    area = ones @ m1
    lu = splu((K + M / area).tocsc())
    x = np.random.default_rng(seed).standard_normal(n)
    mu_old = np.inf
    for _ in range(max_iter):
        x -= (m1 @ x) / area
        x = lu.solve(M @ x)
        x -= (m1 @ x) / area
        x /= np.sqrt(x @ (M @ x))
        mu = x @ (K @ x)
        if abs(mu - mu_old) <= tol * mu:
            break
        mu_old = mu
    return float(1.0 / np.sqrt(mu))


@dataclass(frozen=True)
class DomainConvergence:
    L: float
    factor: float
    discrepancy: float
    reference_norm: float


def domain_convergence(geom, trunc, m0, L, factor, n_r, n_theta, cells_per_unit, config=None):
    """L2 distance of gradients on Omega(-L/2, L/2) between solves at L and factor * L.

    Both meshes are uniform with the same axial spacing, so they share the
    lattice on the comparison region; ``(factor - 1) L * cells_per_unit``
    must be an integer.
    """
    from .solver import solve

    if not factor > 1.0:
        raise ValueError("factor must exceed 1")
    n1 = 2.0 * L * cells_per_unit
    n2 = 2.0 * factor * L * cells_per_unit
    if abs(n1 - round(n1)) > 1e-9 or abs(n2 - round(n2)) > 1e-9 or abs((n2 - n1) / 2 - round((n2 - n1) / 2)) > 1e-9:
        raise IncompatibleMeshes("axial lattices do not align for this L, factor and spacing")
    meshes = [build_mesh(geom, L, n_r, n_theta, int(round(n1))), build_mesh(geom, factor * L, n_r, n_theta, int(round(n2)))]
    grads = []
    for m in meshes:
        fld, _ = solve(m, trunc, m0, config)
        k1, k2 = m.station_index(-L / 2), m.station_index(L / 2)
        grads.append(fld.gradients(m.element_slab(m.z[k1], m.z[k2])))
    w = meshes[0].quadrature.weights[meshes[0].element_slab(-L / 2, L / 2)]
    diff = grads[0] - grads[1]
    disc = float(np.sqrt(np.sum(w * np.einsum("eqi,eqi->eq", diff, diff))))
    ref = float(np.sqrt(np.sum(w * np.einsum("eqi,eqi->eq", grads[1], grads[1]))))
    return DomainConvergence(float(L), float(factor), disc, ref)
