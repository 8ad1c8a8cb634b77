"""Normalized Bernoulli density law and its subsonic truncation.

Units are normalized by the critical (sonic) state, so that the sonic point
is ``q = 1, rho = 1``.  For a polytropic gas the normalized sound speed obeys
``c^2 = rho**(gamma - 1)`` and Bernoulli's law reads::

    q^2 / 2 + rho**(gamma - 1) / (gamma - 1) = 1/2 + 1 / (gamma - 1)

which is solved in closed form for ``rho(q^2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import EllipticityViolation, NegativeInput, OutOfRange, Supersonic

#: number of samples used to certify a truncation (on s^2 in [0, SCAN_MAX])
SCAN_POINTS = 100_000
SCAN_MAX = 4.0


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class GasModel:
    gamma: float = 1.4
    pressure_scale: float = 1.0  # A in p = A rho^gamma; drops out after normalization

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must be > 1 (got {self.gamma})")
        if not self.pressure_scale > 0.0:
            raise ValueError("pressure_scale must be positive")


@dataclass(frozen=True)
class DensityLaw:
    gas: GasModel = field(default_factory=GasModel)

    @property
    def gamma(self):
        return self.gas.gamma

    @property
    def _k(self):
        return 0.5 * (self.gamma - 1.0)

    @property
    def vacuum_speed_sq(self):
        """Speed squared at which the density reaches zero."""
        return (self.gamma + 1.0) / (self.gamma - 1.0)

    @property
    def stagnation_density(self):
        return (1.0 + self._k) ** (1.0 / (self.gamma - 1.0))

    def _rho(self, q_sq):
        # unchecked; callers guarantee 0 <= q_sq < vacuum_speed_sq
        return (1.0 + self._k * (1.0 - q_sq)) ** (1.0 / (self.gamma - 1.0))

    def _check(self, q_sq):
        q_sq = np.asarray(q_sq, dtype=float)
        if np.any(q_sq < 0.0):
            raise NegativeInput(f"speed squared must be >= 0 (min {q_sq.min()})")
        if np.any(q_sq >= self.vacuum_speed_sq):
            raise OutOfRange(
                f"speed squared {q_sq.max()} reaches the vacuum limit {self.vacuum_speed_sq}"
            )
        return q_sq

    def density(self, q_sq):
        return _out(self._rho(self._check(q_sq)))

    def ddensity(self, q_sq):
        """d rho / d(q^2) = -rho**(2 - gamma) / 2."""
        rho = self._rho(self._check(q_sq))
        return _out(-0.5 * rho ** (2.0 - self.gamma))

    def d2density(self, q_sq):
        rho = self._rho(self._check(q_sq))
        return _out(0.25 * (2.0 - self.gamma) * rho ** (3.0 - 2.0 * self.gamma))

    def sound_speed_sq(self, rho):
        return _out(np.asarray(rho, dtype=float) ** (self.gamma - 1.0))

    def half_integral(self, q_sq):
        """Closed form of 0.5 * int_0^{q_sq} rho(tau) dtau.

        Written with expm1/log1p so that small arguments keep full relative
        precision.
        """
        q_sq = self._check(q_sq)
        g, k = self.gamma, self._k
        rho0_g = self.stagnation_density ** g
        val = -(rho0_g / g) * np.expm1((g / (g - 1.0)) * np.log1p(-k * q_sq / (1.0 + k)))
        return _out(val)

    def momentum(self, q):
        q = np.asarray(q, dtype=float)
        if np.any(q < 0.0):
            raise NegativeInput("speed must be >= 0")
        return _out(self.density(q * q) * q)

    def invert_momentum_subsonic(self, m):
        """Subsonic speed q in [0, 1) with rho(q^2) q = m."""
        m = float(m)
        if m < 0.0:
            raise NegativeInput("momentum must be >= 0")
        if m >= 1.0:
            raise Supersonic(f"momentum {m} >= 1 has no subsonic solution")
        if m == 0.0:
            return 0.0
        return brentq(lambda q: self._rho(q * q) * q - m, 0.0, 1.0, xtol=1e-16, rtol=1e-15)


def density(law, q_sq):
    return law.density(q_sq)


def momentum(law, q):
    return law.momentum(q)


def invert_momentum_subsonic(law, m):
    return law.invert_momentum_subsonic(m)


@dataclass(frozen=True)
class TruncatedDensity:
    """Density law frozen above speed^2 = 1 - eps.

    Below ``1 - 2 eps`` it is the physical density; on ``[1 - 2 eps, 1 - eps]``
    a quintic Hermite blend (in the variable s^2) joins it with C^2 contact
    to the plateau value ``rho(1 - 3 eps / 2)``.  Use :func:`build_truncation`
    to construct one; the constructor does not certify anything.
    """

    law: DensityLaw
    epsilon: float
    plateau: float
    blend: np.polynomial.Polynomial  # in t = (s^2 - lo) / width
    lam: float
    Lam: float

    @property
    def lo(self):
        return 1.0 - 2.0 * self.epsilon

    @property
    def hi(self):
        return 1.0 - self.epsilon

    @property
    def width(self):
        return self.epsilon

    @property
    def C(self):
        """Constant C(eps) of the two-sided quadratic bound on F_eps."""
        return max(self.Lam, 1.0 / self.lam)

    def H(self, s_sq):
        s_sq = np.asarray(s_sq, dtype=float)
        out = np.full(s_sq.shape, self.plateau)
        below = s_sq < self.lo
        out[below] = self.law._rho(s_sq[below])
        mid = (s_sq >= self.lo) & (s_sq < self.hi)
        out[mid] = self.blend((s_sq[mid] - self.lo) / self.width)
        return _out(out)

    def dH(self, s_sq):
        s_sq = np.asarray(s_sq, dtype=float)
        out = np.zeros(s_sq.shape)
        below = s_sq < self.lo
        rho = self.law._rho(s_sq[below])
        out[below] = -0.5 * rho ** (2.0 - self.law.gamma)
        mid = (s_sq >= self.lo) & (s_sq < self.hi)
        out[mid] = self.blend.deriv()((s_sq[mid] - self.lo) / self.width) / self.width
        return _out(out)

    def H_and_dH(self, s_sq):
        return self.H(s_sq), self.dH(s_sq)

    def F(self, q_sq):
        """F_eps(q^2) = 0.5 * int_0^{q^2} H_eps."""
        q_sq = np.asarray(q_sq, dtype=float)
        if np.any(q_sq < 0.0):
            raise NegativeInput("speed squared must be >= 0")
        anti = self.blend.integ()
        f_lo = self.law.half_integral(self.lo)
        f_hi = f_lo + 0.5 * self.width * anti(1.0)
        out = np.array(f_hi + 0.5 * self.plateau * (q_sq - self.hi))
        below = q_sq < self.lo
        out[below] = self.law.half_integral(q_sq[below])
        mid = (q_sq >= self.lo) & (q_sq < self.hi)
        out[mid] = f_lo + 0.5 * self.width * anti((q_sq[mid] - self.lo) / self.width)
        return _out(out)

    def momentum(self, q):
        """Truncated flux density H_eps(q^2) q; strictly increasing in q."""
        q = np.asarray(q, dtype=float)
        return _out(self.H(q * q) * q)

    def invert_momentum(self, m):
        """Speed q >= 0 with H_eps(q^2) q = m (exists for every m >= 0)."""
        if m < 0.0:
            raise NegativeInput("momentum must be >= 0")
        if m == 0.0:
            return 0.0
        upper = max(2.0, 2.0 * m / self.plateau)
        return brentq(lambda q: self.momentum(q) - m, 0.0, upper, xtol=1e-16, rtol=1e-15)

    def coefficient_matrix(self, grad):
        """a_ij = H delta_ij + 2 H' p_i p_j for gradients of shape (..., 3)."""
        p = np.asarray(grad, dtype=float)
        s_sq = np.sum(p * p, axis=-1)
        h, dh = self.H(s_sq), self.dH(s_sq)
        h = np.asarray(h)[..., None, None]
        dh = np.asarray(dh)[..., None, None]
        return h * np.eye(3) + 2.0 * dh * p[..., :, None] * p[..., None, :]


def _quintic_blend(law, eps):
    lo, width = 1.0 - 2.0 * eps, eps
    y0 = law.density(lo)
    y1 = law.ddensity(lo) * width
    y2 = law.d2density(lo) * width**2
    yb = law.density(1.0 - 1.5 * eps)
    # P(t) = sum c_n t^n; conditions at t=0 fix c0, c1, c2
    c0, c1, c2 = y0, y1, 0.5 * y2
    rhs = np.array([yb - (c0 + c1 + c2), -(c1 + 2 * c2), -2 * c2])
    mat = np.array([[1.0, 1.0, 1.0], [3.0, 4.0, 5.0], [6.0, 12.0, 20.0]])
    c3, c4, c5 = np.linalg.solve(mat, rhs)
    return np.polynomial.Polynomial([c0, c1, c2, c3, c4, c5]), yb


def build_truncation(law, epsilon):
    """Build and certify the truncated density for ``0 < epsilon < 1/4``.

    Raises EllipticityViolation if the scan finds H + 2 H' s^2 <= 0 or a
    place where H increases.
    """
    eps = float(epsilon)
    if not 0.0 < eps < 0.25:
        raise ValueError(f"epsilon must lie in (0, 1/4) (got {epsilon})")
    blend, plateau = _quintic_blend(law, eps)
    trunc = TruncatedDensity(law, eps, plateau, blend, lam=np.nan, Lam=np.nan)

    s_sq = np.linspace(0.0, SCAN_MAX, SCAN_POINTS + 1)
    # extra resolution inside the blend window
    s_sq = np.union1d(s_sq, np.linspace(trunc.lo, trunc.hi, 10_001))
    h, dh = trunc.H(s_sq), trunc.dH(s_sq)
    lower = h + 2.0 * dh * s_sq
    rise = np.diff(h)
    tol = 64 * np.finfo(float).eps * h.max()
    if dh.max() > tol or rise.max() > tol:
        bad = s_sq[np.argmax(dh)] if dh.max() > tol else s_sq[np.argmax(rise)]
        raise EllipticityViolation(f"truncated density increases near s^2 = {bad:.6g}")
    if lower.min() <= 0.0:
        bad = s_sq[np.argmin(lower)]
        raise EllipticityViolation(f"H + 2 H' s^2 = {lower.min():.3g} <= 0 at s^2 = {bad:.6g}")
    return TruncatedDensity(law, eps, plateau, blend, lam=float(lower.min()), Lam=float(h.max()))


def F_eps(trunc, q_sq):
    return trunc.F(q_sq)


def coefficient_matrix(trunc, grad):
    return trunc.coefficient_matrix(grad)
