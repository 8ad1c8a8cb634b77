"""Nozzle wall and obstacle profiles in cylindrical coordinates (r, theta, x3).

The flow domain is ``{f2(theta, x3) < r < f1(theta, x3)}`` where the obstacle
radius ``f2`` vanishes outside ``[L1, L2]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import Inadmissible

TWO_PI = 2.0 * np.pi


def _smoothstep(u, deriv=0):
    """C^2 quintic switch 0 -> 1 on [0, 1], clipped outside."""
    u = np.clip(u, 0.0, 1.0)
    if deriv == 0:
        return u**3 * (10.0 - 15.0 * u + 6.0 * u * u)
    if deriv == 1:
        return 30.0 * u * u * (1.0 - u) ** 2
    return 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u)


@dataclass(frozen=True)
class NozzleProfile:
    """Wall radius ``f1``.

    ``straight``: ``f1 = f_bar``.
    ``algebraic``: ``f1 = f_bar + a * sigma(|x3|) * (1 + |x3|)**(-l) * m(theta)``,
    with ``sigma`` switching on smoothly over ``K/2 <= |x3| <= K`` and
    ``m(theta) = 1 + sum_k c_k cos(k theta)`` from ``theta_modes``.
    ``tabulated``: cubic spline through file data, constant beyond the table.
    """

    kind: str = "straight"
    f_bar: float = 1.0
    amplitude: float = 0.0
    decay_l: float = 1.0
    K: float = 4.0
    theta_modes: tuple = ()
    table: tuple | None = None  # (x3, f1) arrays for the tabulated family

    def __post_init__(self):
        if self.kind not in ("straight", "algebraic", "tabulated"):
            raise ValueError(f"unknown wall family {self.kind!r}")
        if not self.f_bar > 0.0:
            raise ValueError("f_bar must be positive")
        if self.kind == "algebraic" and not self.decay_l > 0.0:
            raise ValueError("decay_l must be positive")
        if not self.K > 0.0:
            raise ValueError("K must be positive")
        if self.kind == "tabulated" and self.table is None:
            raise ValueError("tabulated profile needs a table")

    @property
    def axisymmetric(self):
        return self.kind != "algebraic" or not any(self.theta_modes)

    def _spline(self):
        x, f = self.table
        return CubicSpline(np.asarray(x), np.asarray(f), bc_type="clamped")

    def radius(self, theta, x3, deriv=0):
        """f1 or its ``deriv``-th x3-derivative (deriv <= 2)."""
        theta = np.asarray(theta, dtype=float)
        x3 = np.asarray(x3, dtype=float)
        shape = np.broadcast(theta, x3).shape
        if self.kind == "straight" or (self.kind == "algebraic" and self.amplitude == 0.0):
            base = self.f_bar if deriv == 0 else 0.0
            return np.full(shape, base) if shape else base
        if self.kind == "tabulated":
            x, _ = self.table
            xc = np.clip(x3, x[0], x[-1])
            val = self._spline()(xc, deriv)
            if deriv:
                val = np.where((x3 < x[0]) | (x3 > x[-1]), 0.0, val)
            val = np.broadcast_to(val, shape)
            return float(val) if not shape else np.array(val)

        a, l, K = self.amplitude, self.decay_l, self.K
        ax = np.abs(x3)
        sgn = np.where(x3 < 0.0, -1.0, 1.0)
        u = (ax - 0.5 * K) / (0.5 * K)
        du = 1.0 / (0.5 * K)
        s0 = _smoothstep(u)
        p0 = (1.0 + ax) ** (-l)
        if deriv == 0:
            g = s0 * p0
        else:
            s1 = _smoothstep(u, 1) * du
            p1 = -l * (1.0 + ax) ** (-l - 1.0)
            if deriv == 1:
                g = sgn * (s1 * p0 + s0 * p1)
            else:
                s2 = _smoothstep(u, 2) * du * du
                p2 = l * (l + 1.0) * (1.0 + ax) ** (-l - 2.0)
                g = s2 * p0 + 2.0 * s1 * p1 + s0 * p2
        mod = 1.0
        for k, c in enumerate(self.theta_modes, start=1):
            mod = mod + c * np.cos(k * theta)
        val = a * g * mod
        if deriv == 0:
            val = val + self.f_bar
        val = np.broadcast_to(val, shape)
        return float(val) if not shape else np.array(val)


@dataclass(frozen=True)
class ObstacleProfile:
    """Axisymmetric bump ``f2 = b * sin(pi (x3 - L1) / (L2 - L1)) ** (2 * power)``.

    ``power >= 2`` gives vanishing first and second derivatives at both tips.
    """

    L1: float = -1.0
    L2: float = 1.0
    b: float = 0.4
    power: int = 2
    table: tuple | None = None  # optional (x3, f2) spline data

    def __post_init__(self):
        if not self.L1 < self.L2:
            raise ValueError("obstacle needs L1 < L2")
        if self.b < 0.0:
            raise ValueError("obstacle radius b must be >= 0")
        if self.power < 1:
            raise ValueError("power must be >= 1")

    def radius(self, theta, x3, deriv=0):
        theta = np.asarray(theta, dtype=float)
        x3 = np.asarray(x3, dtype=float)
        shape = np.broadcast(theta, x3).shape
        inside = (x3 > self.L1) & (x3 < self.L2)
        if self.table is not None:
            x, f = self.table
            spl = CubicSpline(np.asarray(x), np.asarray(f), bc_type="clamped")
            val = np.where(inside, spl(np.clip(x3, x[0], x[-1]), deriv), 0.0)
            if deriv == 0:
                val = np.maximum(val, 0.0)
        else:
            w = np.pi / (self.L2 - self.L1)
            u = w * (np.clip(x3, self.L1, self.L2) - self.L1)
            g = np.sin(u) ** 2
            p = self.power
            if deriv == 0:
                val = self.b * g**p
            elif deriv == 1:
                val = self.b * p * g ** (p - 1) * np.sin(2 * u) * w
            else:
                gp = np.sin(2 * u)
                term = p * (p - 1) * g ** max(p - 2, 0) * gp * gp if p > 1 else 0.0
                val = self.b * w * w * (term + 2.0 * p * g ** (p - 1) * np.cos(2 * u))
            val = np.where(inside, val, 0.0)
        val = np.broadcast_to(val, shape)
        return float(val) if not shape else np.array(val)


@dataclass(frozen=True)
class Admissibility:
    C: float
    decay_constant: float | None
    area_min: float
    area_max: float
    extent: float


@dataclass(frozen=True)
class NozzleGeometry:
    wall: NozzleProfile = field(default_factory=NozzleProfile)
    obstacle: ObstacleProfile | None = None
    certificate: Admissibility = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "certificate", verify_admissibility(self))

    @property
    def gap_constant(self):
        return self.certificate.C

    @property
    def f_bar(self):
        return self.wall.f_bar

    @property
    def axisymmetric(self):
        return self.wall.axisymmetric

    def wall_radius(self, theta, x3):
        return self.wall.radius(theta, x3)

    def obstacle_radius(self, theta, x3):
        if self.obstacle is None:
            x = np.broadcast(np.asarray(theta), np.asarray(x3))
            return np.zeros(x.shape) if x.shape else 0.0
        return self.obstacle.radius(theta, x3)

    def cross_section_area(self, x3, n_theta=64):
        return cross_section_area(self, x3, n_theta)


def wall_radius(geom, theta, x3):
    return geom.wall_radius(theta, x3)


def obstacle_radius(geom, theta, x3):
    return geom.obstacle_radius(theta, x3)


def cross_section_area(geom, x3, n_theta=64):
    """|Sigma_x3| = 0.5 * int_0^{2 pi} (f1^2 - f2^2) dtheta (periodic trapezoid rule)."""
    x3 = np.asarray(x3, dtype=float)
    scalar = x3.ndim == 0
    theta = np.arange(n_theta) * (TWO_PI / n_theta)
    th, xx = np.meshgrid(theta, x3.ravel(), indexing="ij")
    f1 = np.asarray(geom.wall_radius(th, xx))
    f2 = np.asarray(geom.obstacle_radius(th, xx))
    area = 0.5 * (TWO_PI / n_theta) * np.sum(f1 * f1 - f2 * f2, axis=0)
    return float(area[0]) if scalar else area.reshape(x3.shape)


def _decay_constant(wall, x3):
    l = wall.decay_l
    d = wall.radius(0.0, x3) - wall.f_bar, wall.radius(0.0, x3, 1), wall.radius(0.0, x3, 2)
    total = sum(np.abs(x3**k * d[k]) for k in range(3))
    if wall.theta_modes:
        total = total * (1.0 + sum(abs(c) for c in wall.theta_modes))
    return float(np.max(total * x3**l))


def verify_admissibility(geom, n_theta=32, n_x=8001):
    """Certify the bounds ``1/C <= f1 <= C`` and ``1/C <= f1 - f2 <= C``.

    Samples theta x x3 over ``[0, 2 pi) x [-X, X]`` with ``X`` well beyond K and
    the obstacle; for the algebraic family also returns the smallest sampled
    constant in ``sum_k |x3^k d^k (f1 - f_bar)| <= C / x3^l`` on ``x3 > K``.
    """
    wall, obs = geom.wall, geom.obstacle
    X = max(4.0 * wall.K, 40.0)
    if obs is not None:
        X = max(X, 4.0 * max(abs(obs.L1), abs(obs.L2)))
    if wall.table is not None:
        X = max(X, float(np.max(np.abs(wall.table[0]))) + 1.0)
    x3 = np.linspace(-X, X, n_x)
    if obs is not None:
        x3 = np.union1d(x3, np.linspace(obs.L1, obs.L2, 801))
    theta = np.arange(n_theta) * (TWO_PI / n_theta)
    th, xx = np.meshgrid(theta, x3, indexing="ij")
    f1 = np.asarray(wall.radius(th, xx))
    if f1.min() <= 0.0:
        i = np.unravel_index(np.argmin(f1), f1.shape)
        raise Inadmissible("wall radius is not positive", (th[i], xx[i]))
    C = max(f1.max(), 1.0 / f1.min())
    if obs is not None:
        f2 = np.asarray(obs.radius(th, xx))
        gap = f1 - f2
        if gap.min() <= 0.0:
            i = np.unravel_index(np.argmin(gap), gap.shape)
            raise Inadmissible(
                f"obstacle touches the wall (gap {gap.min():.3g})", (float(th[i]), float(xx[i]))
            )
        sel = (xx >= obs.L1) & (xx <= obs.L2)
        C = max(C, f2.max(), 1.0 / gap[sel].min(), gap[sel].max())
    decay = None
    if wall.kind == "algebraic":
        xs = np.geomspace(wall.K * (1.0 + 1e-9), 1e3 * max(wall.K, 1.0), 4001)
        decay = _decay_constant(wall, xs)
        if not np.isfinite(decay):
            raise Inadmissible("wall perturbation violates the algebraic decay bound")
    elif wall.kind == "straight":
        decay = 0.0
    area = 0.5 * (TWO_PI / n_theta) * np.sum(
        f1**2 - (np.asarray(obs.radius(th, xx)) ** 2 if obs is not None else 0.0), axis=0
    )
    return Admissibility(float(C), decay, float(area.min()), float(area.max()), float(X))


def load_profile(path):
    """Read a tabulated profile file with rows ``x3 f1 [f2]``.

    Returns ``(NozzleProfile, ObstacleProfile | None)``.  Lines starting with
    '#' are comments; x3 must be strictly increasing.
    """
    data = np.loadtxt(Path(path), comments="#", ndmin=2)
    if data.shape[1] not in (2, 3):
        raise ValueError("profile rows must be 'x3 f1 [f2]'")
    x = data[:, 0]
    if np.any(np.diff(x) <= 0.0):
        raise ValueError("x3 column must be strictly increasing")
    wall = NozzleProfile(kind="tabulated", f_bar=float(data[-1, 1]), table=(x, data[:, 1]))
    obstacle = None
    if data.shape[1] == 3 and np.any(data[:, 2] > 0.0):
        pos = np.nonzero(data[:, 2] > 0.0)[0]
        lo, hi = max(pos[0] - 1, 0), min(pos[-1] + 1, len(x) - 1)
        obstacle = ObstacleProfile(
            L1=float(x[lo]), L2=float(x[hi]), b=float(data[:, 2].max()), table=(x, data[:, 2])
        )
    return wall, obstacle
