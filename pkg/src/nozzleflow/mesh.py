"""Structured hexahedral meshes of the truncated nozzle domain.

The reference lattice ``(s, theta, z)`` is mapped by
``r = f2 + s (f1 - f2)``.  Each element carries its corner coordinates in
cylindrical form and is mapped trilinearly in ``(r, theta, z)`` followed by
the polar map, so cross sections of axisymmetric walls are represented
exactly while the basis stays trilinear in reference coordinates.  Where the
obstacle radius is zero the inner ring collapses to one axis node per plane.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DegenerateJacobian, PinchedDomain, StationOutOfRange

TWO_PI = 2.0 * np.pi

INFLOW, OUTFLOW, WALL, OBSTACLE = 0, 1, 2, 3
TAG_NAMES = {INFLOW: "inflow", OUTFLOW: "outflow", WALL: "wall", OBSTACLE: "obstacle"}

# local corners as (s, theta, zeta) bits; VTK hexahedron order
CORNER_BITS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]
)
_SIGN = 2.0 * CORNER_BITS - 1.0
# local faces: s = 0, s = 1, zeta = 0, zeta = 1
FACE_CORNERS = np.array([[0, 3, 7, 4], [1, 2, 6, 5], [0, 1, 2, 3], [4, 5, 6, 7]])
EDGES = np.array(
    [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]]
)

GAUSS_1D = np.array([-1.0, 1.0]) / np.sqrt(3.0)
GAUSS_3D = np.array([[a, b, c] for c in GAUSS_1D for b in GAUSS_1D for a in GAUSS_1D])
GAUSS_2D = np.array([[a, b] for b in GAUSS_1D for a in GAUSS_1D])


def shape_functions(xi):
    """Trilinear shape values (n_q, 8) and reference gradients (n_q, 8, 3)."""
    xi = np.atleast_2d(xi)
    f = 1.0 + xi[:, None, :] * _SIGN[None, :, :]  # (q, a, 3)
    N = 0.125 * f.prod(axis=2)
    dN = np.empty(xi.shape[:1] + (8, 3))
    dN[..., 0] = 0.125 * _SIGN[:, 0] * f[..., 1] * f[..., 2]
    dN[..., 1] = 0.125 * _SIGN[:, 1] * f[..., 0] * f[..., 2]
    dN[..., 2] = 0.125 * _SIGN[:, 2] * f[..., 0] * f[..., 1]
    return N, dN


def map_points(corners, xi):
    """Physical points, Jacobians and determinants at reference points.

    corners: (n_el, 8, 3) cylindrical corner coordinates (r, theta, z).
    Returns X (n_el, n_q, 3), J (n_el, n_q, 3, 3) with J[..., i, j] = dX_i/dxi_j,
    and det J (n_el, n_q).
    """
    N, dN = shape_functions(xi)
    cyl = np.einsum("qa,eac->eqc", N, corners)
    dcyl = np.einsum("qaj,eac->eqcj", dN, corners)
    R, T = cyl[..., 0], cyl[..., 1]
    c, s = np.cos(T), np.sin(T)
    X = np.stack([R * c, R * s, cyl[..., 2]], axis=-1)
    dR, dT, dZ = dcyl[..., 0, :], dcyl[..., 1, :], dcyl[..., 2, :]
    J = np.stack(
        [
            dR * c[..., None] - (R * s)[..., None] * dT,
            dR * s[..., None] + (R * c)[..., None] * dT,
            dZ,
        ],
        axis=-2,
    )
    return X, J, np.linalg.det(J)


def physical_gradients(corners, xi):
    """Shape-function gradients in physical space, (n_el, n_q, 8, 3), and det J."""
    _, dN = shape_functions(xi)
    X, J, det = map_points(corners, xi)
    Jinv = np.linalg.inv(J)
    grads = np.einsum("eqji,qaj->eqai", Jinv, dN)
    return X, grads, det


@dataclass(frozen=True)
class VolumeQuadrature:
    points: np.ndarray  # (n_el, 8, 3)
    weights: np.ndarray  # (n_el, 8) Gauss weight times det J
    grads: np.ndarray  # (n_el, 8, 8, 3)


@dataclass(frozen=True)
class SectionLayout:
    """Face quadrature for the lattice cross section ``x3 = t``."""

    t: float
    plane: int
    points: np.ndarray  # (n_face, 4, 3)
    weights: np.ndarray  # (n_face, 4)
    area: float
    # element ids and gradients from the layer above / below the plane (None at the ends)
    above: np.ndarray | None
    above_grads: np.ndarray | None
    below: np.ndarray | None
    below_grads: np.ndarray | None
    shape_values: np.ndarray  # (4, 8) shape functions at the face points (above side)


@dataclass(frozen=True)
class QualityReport:
    min_jacobian: float
    max_jacobian: float
    max_aspect: float
    worst_element: int


@dataclass(frozen=True, eq=False)
class Mesh:
    geom: object
    L: float
    n_r: int
    n_theta: int
    n_z: int
    z: np.ndarray  # plane abscissae, (n_z + 1,)
    nodes: np.ndarray  # Cartesian coordinates (n_nodes, 3)
    node_cyl: np.ndarray  # (r, theta, z)
    node_index: np.ndarray  # (n_z + 1, n_r + 1, n_theta) -> node id
    collapsed: np.ndarray  # (n_z + 1,) plane has a merged axis node
    hexes: np.ndarray  # (n_el, 8)
    corners: np.ndarray  # (n_el, 8, 3) cylindrical, theta unwrapped
    face_nodes: np.ndarray  # (n_face, 4)
    face_tags: np.ndarray
    face_elements: np.ndarray
    face_local: np.ndarray
    _sections: dict = field(default_factory=dict, repr=False)

    @property
    def resolution(self):
        return (self.n_r, self.n_theta, self.n_z)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.hexes)

    @property
    def elements_per_layer(self):
        return self.n_r * self.n_theta

    def layer_elements(self, k):
        m = self.elements_per_layer
        return np.arange(k * m, (k + 1) * m)

    @cached_property
    def node_plane(self):
        plane = np.empty(self.n_nodes, dtype=int)
        for k in range(self.n_z + 1):
            plane[self.node_index[k].ravel()] = k
        return plane

    @cached_property
    def element_layer(self):
        return np.repeat(np.arange(self.n_z), self.elements_per_layer)

    @cached_property
    def inflow_nodes(self):
        return np.unique(self.node_index[0])

    @cached_property
    def dirichlet_mask(self):
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.inflow_nodes] = True
        return mask

    @cached_property
    def quadrature(self):
        X, grads, det = physical_gradients(self.corners, GAUSS_3D)
        if det.min() <= 0.0:
            bad = np.unique(np.nonzero(det <= 0.0)[0])
            raise DegenerateJacobian(f"non-positive Jacobian in elements {bad[:10].tolist()}", bad)
        return VolumeQuadrature(X, det, grads)

    @cached_property
    def volume(self):
        return float(self.quadrature.weights.sum())

    @cached_property
    def csr_pattern(self):
        """(indptr, indices, scatter) for assembling (n_el, 8, 8) element matrices."""
        n = self.n_nodes
        rows = np.repeat(self.hexes, 8, axis=1).ravel()
        cols = np.tile(self.hexes, (1, 8)).ravel()
        keys, scatter = np.unique(rows * n + cols, return_inverse=True)
        indices = keys % n
        indptr = np.searchsorted(keys // n, np.arange(n + 1))
        return indptr, indices, scatter

    @cached_property
    def outflow_load(self):
        """b_i = (1/|Sigma_L|) * integral over the outflow section of N_i."""
        sec = self.section(self.L)
        vals = np.einsum("fq,qa->fa", sec.weights, sec.shape_values)
        nodes = self.hexes[sec.below]
        b = np.bincount(nodes.ravel(), weights=vals.ravel(), minlength=self.n_nodes)
        return b / sec.area

    def station_index(self, t):
        k = int(np.argmin(np.abs(self.z - t)))
        if abs(self.z[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise StationOutOfRange(f"x3 = {t} is not a lattice plane")
        return k

    def has_station(self, t):
        return bool(np.min(np.abs(self.z - t)) <= 1e-9 * max(1.0, abs(t)))

    def section(self, t):
        """Section layout at lattice plane ``t`` (cached)."""
        if not -self.L - 1e-12 <= t <= self.L + 1e-12:
            raise StationOutOfRange(f"x3 = {t} lies outside [-L, L]")
        k = self.station_index(t)
        if k not in self._sections:
            self._sections[k] = section_layout(self, t)
        return self._sections[k]

    def element_slab(self, t1, t2):
        """Elements between lattice planes t1 < t2."""
        k1, k2 = self.station_index(t1), self.station_index(t2)
        if k2 <= k1:
            raise StationOutOfRange("slab needs t1 < t2")
        m = self.elements_per_layer
        return np.arange(k1 * m, k2 * m)


def z_planes(L, n_z, grading=1.0, core=(-1.0, 1.0)):
    """Axial lattice.

    ``grading == 1`` gives ``n_z`` uniform cells.  For ``grading > 1`` the
    cell size grows geometrically (by ``grading`` per cell) away from
    ``core``; every integer abscissa is kept as a plane so unit slabs stay
    lattice-aligned, and the core resolution is chosen so that the total cell
    count is as close to ``n_z`` as possible.
    """
    if grading == 1.0:
        return np.linspace(-L, L, n_z + 1)
    if grading < 1.0:
        raise ValueError("grading ratio must be >= 1")
    inner = np.arange(np.floor(-L) + 1.0, np.ceil(L))
    breaks = np.concatenate([[-L], inner[(inner > -L) & (inner < L)], [L]])
    lengths = np.diff(breaks)
    mids = 0.5 * (breaks[:-1] + breaks[1:])
    dist = np.maximum(0.0, np.maximum(core[0] - mids, mids - core[1]))

    def counts(n_core):
        h = 1.0 / n_core + (grading - 1.0) * dist
        return np.maximum(1, np.ceil(lengths / h - 1e-9).astype(int))

    best = min(range(1, 513), key=lambda n: (abs(counts(n).sum() - n_z), n))
    cells = counts(best)
    parts = [np.linspace(a, b, c + 1)[:-1] for a, b, c in zip(breaks[:-1], breaks[1:], cells)]
    return np.concatenate(parts + [[L]])


def build_mesh(geom, L, n_r, n_theta, n_z, grading=1.0, planes=None):
    """Mesh of ``Omega_L = Omega & {|x3| < L}``.

    ``planes`` overrides the axial lattice.  With grading the realised number
    of axial cells may differ slightly from ``n_z`` (see :func:`z_planes`).
    """
    obs = geom.obstacle
    if obs is not None and not L > max(abs(obs.L1), abs(obs.L2)) + 2.0:
        raise ValueError("L must exceed max(|L1|, |L2|) + 2")
    if n_r < 4 or n_theta < 4 or n_z < 8:
        raise ValueError("need n_r, n_theta >= 4 and n_z >= 8")
    if planes is None:
        core = (obs.L1 - 1.0, obs.L2 + 1.0) if obs is not None else (-1.0, 1.0)
        planes = z_planes(L, n_z, grading, core)
    z = np.asarray(planes, dtype=float)
    if abs(z[0] + L) > 1e-12 or abs(z[-1] - L) > 1e-12 or np.any(np.diff(z) <= 0.0):
        raise ValueError("planes must increase strictly from -L to L")
    n_z = len(z) - 1

    theta = np.arange(n_theta) * (TWO_PI / n_theta)
    TH, ZZ = np.meshgrid(theta, z, indexing="ij")
    f1 = np.asarray(geom.wall_radius(TH, ZZ)).T  # (n_z+1, n_theta)
    f2 = np.asarray(geom.obstacle_radius(TH, ZZ)).T
    if np.any(f1 - f2 <= 0.0):
        k, j = np.unravel_index(np.argmin(f1 - f2), f1.shape)
        raise PinchedDomain(f"wall and obstacle meet at theta={theta[j]:.4g}, x3={z[k]:.4g}")
    zero = f2 == 0.0
    if np.any(zero.any(axis=1) != zero.all(axis=1)):
        raise ValueError("obstacle radius must vanish uniformly in theta on each plane")
    collapsed = zero.all(axis=1)

    s = np.arange(n_r + 1) / n_r
    node_index = np.empty((n_z + 1, n_r + 1, n_theta), dtype=np.int64)
    cyl = []
    nid = 0
    for k in range(n_z + 1):
        r = f2[k][None, :] + s[:, None] * (f1[k] - f2[k])[None, :]  # (n_r+1, n_theta)
        for i in range(n_r + 1):
            if i == 0 and collapsed[k]:
                node_index[k, 0, :] = nid
                cyl.append([[0.0, 0.0, z[k]]])
                nid += 1
                continue
            node_index[k, i, :] = nid + np.arange(n_theta)
            cyl.append(np.stack([r[i], theta, np.full(n_theta, z[k])], axis=1))
            nid += n_theta
    node_cyl = np.concatenate(cyl)
    nodes = np.stack(
        [node_cyl[:, 0] * np.cos(node_cyl[:, 1]), node_cyl[:, 0] * np.sin(node_cyl[:, 1]), node_cyl[:, 2]],
        axis=1,
    )

    kk, ii, jj = np.meshgrid(np.arange(n_z), np.arange(n_r), np.arange(n_theta), indexing="ij")
    kk, ii, jj = kk.ravel(), ii.ravel(), jj.ravel()
    bs, bt, bz = CORNER_BITS[:, 0], CORNER_BITS[:, 1], CORNER_BITS[:, 2]
    ck = kk[:, None] + bz
    ci = ii[:, None] + bs
    cj = jj[:, None] + bt
    hexes = node_index[ck, ci, cj % n_theta]
    # corner radii come from the lattice (not the merged node) so theta stays per-corner
    r_lat = f2[:, None, :] + s[None, :, None] * (f1 - f2)[:, None, :]
    corners = np.stack(
        [r_lat[ck, ci, cj % n_theta], cj * (TWO_PI / n_theta), z[ck]], axis=-1
    ).astype(float)

    faces, tags, elems, local = [], [], [], []
    m = n_r * n_theta
    e_all = np.arange(len(hexes))

    def add(sel, lf, tag):
        e = e_all[sel]
        faces.append(hexes[e][:, FACE_CORNERS[lf]])
        tags.append(np.full(len(e), tag))
        elems.append(e)
        local.append(np.full(len(e), lf))

    add(kk == 0, 2, INFLOW)
    add(kk == n_z - 1, 3, OUTFLOW)
    add(ii == n_r - 1, 1, WALL)
    inner_open = ~(collapsed[kk] & collapsed[kk + 1])
    add((ii == 0) & inner_open, 0, OBSTACLE)

    assert len(e_all) == n_z * m
    return Mesh(
        geom=geom,
        L=float(L),
        n_r=n_r,
        n_theta=n_theta,
        n_z=n_z,
        z=z,
        nodes=nodes,
        node_cyl=node_cyl,
        node_index=node_index,
        collapsed=collapsed,
        hexes=hexes,
        corners=corners,
        face_nodes=np.concatenate(faces),
        face_tags=np.concatenate(tags),
        face_elements=np.concatenate(elems),
        face_local=np.concatenate(local),
    )


def _face_points(mesh, elements, zeta):
    xi = np.column_stack([GAUSS_2D, np.full(4, zeta)])
    X, grads, _ = physical_gradients(mesh.corners[elements], xi)
    _, J, _ = map_points(mesh.corners[elements], xi)
    dA = np.linalg.norm(np.cross(J[..., :, 0], J[..., :, 1]), axis=-1)
    N, _ = shape_functions(xi)
    return X, grads, dA, N


def section_layout(mesh, t):
    """Face quadrature (2 x 2 Gauss per face) on the lattice plane ``x3 = t``."""
    k = mesh.station_index(t)
    above = mesh.layer_elements(k) if k < mesh.n_z else None
    below = mesh.layer_elements(k - 1) if k > 0 else None
    above_grads = below_grads = None
    if above is not None:
        X, above_grads, dA, N = _face_points(mesh, above, -1.0)
    if below is not None:
        Xb, below_grads, dAb, Nb = _face_points(mesh, below, 1.0)
        if above is None:
            X, dA, N = Xb, dAb, Nb
    return SectionLayout(
        t=float(mesh.z[k]),
        plane=k,
        points=X,
        weights=dA,
        area=float(dA.sum()),
        above=above,
        above_grads=above_grads,
        below=below,
        below_grads=below_grads,
        shape_values=N,
    )


def quality_report(mesh):
    """Jacobian extremes over all Gauss points and the worst aspect ratio.

    Raises DegenerateJacobian naming every element with det J <= 0.
    """
    _, _, det = map_points(mesh.corners, GAUSS_3D)
    emin = det.min(axis=1)
    if emin.min() <= 0.0:
        bad = np.nonzero(emin <= 0.0)[0]
        raise DegenerateJacobian(f"non-positive Jacobian in elements {bad[:10].tolist()}", bad)
    cyl = mesh.corners
    xyz = np.stack([cyl[..., 0] * np.cos(cyl[..., 1]), cyl[..., 0] * np.sin(cyl[..., 1]), cyl[..., 2]], -1)
    lengths = np.linalg.norm(xyz[:, EDGES[:, 0]] - xyz[:, EDGES[:, 1]], axis=-1)
    longest = lengths.max(axis=1)
    shortest = np.where(lengths > 1e-12 * longest[:, None], lengths, np.inf).min(axis=1)
    aspect = longest / shortest
    return QualityReport(
        min_jacobian=float(emin.min()),
        max_jacobian=float(det.max()),
        max_aspect=float(aspect.max()),
        worst_element=int(np.argmin(emin)),
    )
