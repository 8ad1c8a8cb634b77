"""Text output: field dumps, key/value reports, mesh dumps and legacy VTK."""
from __future__ import annotations

import numpy as np

from .errors import IncompatibleMeshes
from .mesh import TAG_NAMES

FIELD_HEADER = "# x y z phi u1 u2 u3 rho"


def nodal_velocity(field):
    """Nodal gradient: volume-weighted mean of the element-average gradients around each node."""
    mesh = field.mesh
    w = mesh.quadrature.weights
    g = field.gradients()
    vol = w.sum(axis=1)
    mean = np.einsum("eq,eqi->ei", w, g) / vol[:, None]
    num = np.zeros((mesh.n_nodes, 3))
    for i in range(3):
        num[:, i] = np.bincount(mesh.hexes.ravel(), weights=np.repeat(mean[:, i] * vol, 8), minlength=mesh.n_nodes)
    den = np.bincount(mesh.hexes.ravel(), weights=np.repeat(vol, 8), minlength=mesh.n_nodes)
    return num / den[:, None]


def write_field(path, field, trunc):
    u = nodal_velocity(field)
    rho = np.asarray(trunc.H(np.sum(u * u, axis=1)))
    data = np.column_stack([field.mesh.nodes, field.phi, u, rho])
    np.savetxt(path, data, fmt="%.17g", header=FIELD_HEADER[2:], comments="# ")


def read_field(path):
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 8:
        raise ValueError(f"{path}: expected 8 columns, found {data.shape[1]}")
    return data


def diff_fields(path_a, path_b, z_range=None, decimals=9):
    """Max and RMS differences of phi and velocity on lattice points common to both dumps.

    Potentials are compared after removing their mean offset on the common
    region, since the inflow normalization differs between domain lengths.
    """
    a, b = read_field(path_a), read_field(path_b)
    key_a = {tuple(k): i for i, k in enumerate(np.round(a[:, :3], decimals))}
    pairs = [(key_a[tuple(k)], j) for j, k in enumerate(np.round(b[:, :3], decimals)) if tuple(k) in key_a]
    if z_range is not None:
        lo, hi = z_range
        pairs = [(i, j) for i, j in pairs if lo - 1e-12 <= a[i, 2] <= hi + 1e-12]
    if not pairs:
        raise IncompatibleMeshes("the two field files share no lattice points")
    ia, ib = map(np.array, zip(*pairs))
    dphi = a[ia, 3] - b[ib, 3]
    dphi -= dphi.mean()
    du = np.linalg.norm(a[ia, 4:7] - b[ib, 4:7], axis=1)
    return {
        "points": len(ia),
        "phi_max": float(np.abs(dphi).max()),
        "phi_rms": float(np.sqrt(np.mean(dphi**2))),
        "grad_max": float(du.max()),
        "grad_rms": float(np.sqrt(np.mean(du**2))),
    }


def write_report(path, sections):
    """``sections`` maps a section name to an ordered dict of key/value pairs."""
    with open(path, "w") as fh:
        for name, items in sections.items():
            fh.write(f"[{name}]\n")
            for key, val in items.items():
                fh.write(f"{key} = {_fmt(val)}\n")
            fh.write("\n")


def _fmt(val):
    if isinstance(val, (bool, np.bool_)):
        return "true" if val else "false"
    if isinstance(val, (float, np.floating)):
        return f"{float(val):.17g}"
    if isinstance(val, (list, tuple, np.ndarray)):
        return ", ".join(_fmt(v) for v in val)
    return str(val)


def write_mesh(path, mesh):
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.n_nodes}\n")
        np.savetxt(fh, mesh.nodes, fmt="%.17g")
        fh.write(f"hexes {mesh.n_elements}\n")
        np.savetxt(fh, mesh.hexes, fmt="%d")
        fh.write(f"faces {len(mesh.face_nodes)}\n")
        names = np.array([TAG_NAMES[t] for t in mesh.face_tags])
        for quad, name in zip(mesh.face_nodes, names):
            fh.write(" ".join(map(str, quad)) + f" {name}\n")


def write_vtk(path, field, trunc=None):
    """Legacy ASCII unstructured grid with phi and nodal velocity."""
    mesh = field.mesh
    u = nodal_velocity(field)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nnozzle potential flow\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        np.savetxt(fh, mesh.nodes, fmt="%.17g")
        fh.write(f"CELLS {mesh.n_elements} {9 * mesh.n_elements}\n")
        np.savetxt(fh, np.column_stack([np.full(mesh.n_elements, 8), mesh.hexes]), fmt="%d")
        fh.write(f"CELL_TYPES {mesh.n_elements}\n")
        np.savetxt(fh, np.full(mesh.n_elements, 12), fmt="%d")
        fh.write(f"POINT_DATA {mesh.n_nodes}\nSCALARS phi double 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, field.phi, fmt="%.17g")
        fh.write("VECTORS velocity double\n")
        np.savetxt(fh, u, fmt="%.17g")
        if trunc is not None:
            fh.write("SCALARS rho double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, np.asarray(trunc.H(np.sum(u * u, axis=1))), fmt="%.17g")
