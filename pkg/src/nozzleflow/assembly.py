"""Discrete energy, weak-form residual and Newton stiffness.

The discrete functional is

    I(phi) = sum_q w_q F(|grad phi(x_q)|^2) - m0 * b . phi,

with ``b`` the normalized outflow trace load (see ``Mesh.outflow_load``).
Nodes on the inflow section are pinned to zero; their residual entries are
zeroed and the stiffness acts as the identity on them.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

CHUNK = 4096  # elements per work unit; fixed so results do not depend on workers

# 3-point Gauss-Legendre on [0, 1] for short energy increments
_GL_T = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GL_W = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass(eq=False)
class PotentialField:
    mesh: object
    phi: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.shape != (self.mesh.n_nodes,):
            raise ValueError("phi must hold one value per mesh node")
        if np.any(self.phi[self.mesh.dirichlet_mask] != 0.0):
            raise ValueError("phi must vanish on the inflow section")

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.n_nodes))

    @property
    def dirichlet_mask(self):
        return self.mesh.dirichlet_mask

    def gradients(self, elements=None):
        """grad phi at the volume quadrature points, (n_el, 8, 3)."""
        quad = self.mesh.quadrature
        if elements is None:
            return np.einsum("eqai,ea->eqi", quad.grads, _local_values(self.phi, self.mesh.hexes))
        return np.einsum("eqai,ea->eqi", quad.grads[elements], _local_values(self.phi, self.mesh.hexes[elements]))


def _local_values(phi, hexes):
    # shape gradients sum to zero, so shifting by one nodal value is exact and
    # avoids cancellation when phi is large compared with its variation
    v = phi[hexes]
    return v - v[:, :1]


@dataclass(frozen=True)
class QuadratureState:
    """Gradients and density coefficients cached at one iterate."""

    grad: np.ndarray  # (n_el, 8, 3)
    speed_sq: np.ndarray  # (n_el, 8)
    H: np.ndarray
    dH: np.ndarray


def _chunked(fn, n, workers=None):
    """Apply ``fn(slice)`` over element chunks and concatenate in order."""
    slices = [slice(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]
    if workers and workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, slices))
    else:
        parts = [fn(s) for s in slices]
    return np.concatenate(parts)


def quadrature_state(field, trunc, workers=None):
    mesh = field.mesh
    quad = mesh.quadrature
    phi_e = _local_values(field.phi, mesh.hexes)

    def grads(s):
        return np.einsum("eqai,ea->eqi", quad.grads[s], phi_e[s])

    g = _chunked(grads, mesh.n_elements, workers)
    s_sq = np.einsum("eqi,eqi->eq", g, g)
    H, dH = trunc.H_and_dH(s_sq)
    return QuadratureState(g, s_sq, np.asarray(H), np.asarray(dH))


def _scatter(mesh, values):
    return np.bincount(mesh.hexes.ravel(), weights=values.ravel(), minlength=mesh.n_nodes)


def flux_load(mesh):
    """Unit-flux outflow load; the linear term of the energy is ``m0 * flux_load . phi``."""
    return mesh.outflow_load


def energy(field, trunc, m0, state=None):
    state = state or quadrature_state(field, trunc)
    w = field.mesh.quadrature.weights
    return float(np.sum(w * trunc.F(state.speed_sq)) - m0 * (field.mesh.outflow_load @ field.phi))


def residual(field, trunc, m0, state=None, workers=None):
    """Weak-form residual; zero on the pinned inflow nodes."""
    mesh = field.mesh
    state = state or quadrature_state(field, trunc, workers)
    quad = mesh.quadrature
    flux = (quad.weights * state.H)[..., None] * state.grad  # (n_el, 8, 3)

    def local(s):
        return np.einsum("eqi,eqai->ea", flux[s], quad.grads[s])

    r = _scatter(mesh, _chunked(local, mesh.n_elements, workers)) - m0 * mesh.outflow_load
    r[mesh.dirichlet_mask] = 0.0
    return r


def element_matrices(mesh, state, workers=None):
    quad = mesh.quadrature
    wH = quad.weights * state.H
    w2dH = 2.0 * quad.weights * state.dH

    def local(s):
        G = quad.grads[s]
        gG = np.einsum("eqi,eqai->eqa", state.grad[s], G)
        K = np.einsum("eq,eqai,eqbi->eab", wH[s], G, G)
        K += np.einsum("eq,eqa,eqb->eab", w2dH[s], gG, gG)
        return K

    return _chunked(local, mesh.n_elements, workers)


def assemble(mesh, Ke):
    """CSR matrix from element matrices with inflow rows/columns eliminated."""
    indptr, indices, scatter = mesh.csr_pattern
    fixed = mesh.dirichlet_mask
    h = mesh.hexes
    keep = ~(fixed[h][:, :, None] | fixed[h][:, None, :])
    data = np.bincount(scatter, weights=np.where(keep, Ke, 0.0).ravel(), minlength=len(indices))
    A = sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(mesh.n_nodes,) * 2)
    A.setdiag(np.where(fixed, 1.0, A.diagonal()))
    return A


def hessian(field, trunc, state=None, workers=None):
    """Newton stiffness: integral of a_ij d_j N_b d_i N_a, as scipy CSR."""
    state = state or quadrature_state(field, trunc, workers)
    return assemble(field.mesh, element_matrices(field.mesh, state, workers))


def energy_change(field, direction, alpha, trunc, m0, state=None):
    """I(phi + alpha d) - I(phi), evaluated without cancellation.

    Per quadrature point the change of |grad|^2 is
    ``2 alpha g.dg + alpha^2 |dg|^2``; short increments integrate H directly
    instead of differencing F.
    """
    mesh = field.mesh
    state = state or quadrature_state(field, trunc)
    dg = np.einsum("eqai,ea->eqi", mesh.quadrature.grads, _local_values(direction, mesh.hexes))
    ds = 2.0 * alpha * np.einsum("eqi,eqi->eq", state.grad, dg) + alpha**2 * np.einsum("eqi,eqi->eq", dg, dg)
    s0 = state.speed_sq
    small = np.abs(ds) <= 1e-4
    dF = np.empty_like(s0)
    if small.any():
        a, b = s0[small], ds[small]
        dF[small] = 0.5 * b * sum(w * trunc.H(np.maximum(a + t * b, 0.0)) for t, w in zip(_GL_T, _GL_W))
    big = ~small
    if big.any():
        dF[big] = trunc.F(np.maximum(s0[big] + ds[big], 0.0)) - trunc.F(s0[big])
    return float(np.sum(mesh.quadrature.weights * dF) - alpha * m0 * (mesh.outflow_load @ direction))


def layer_flux(field, trunc, k, state=None):
    """Discrete flux through axial layer k (between planes k and k+1).

    Tests the weak form with the function equal to 1 on planes above k and 0
    on planes at or below k, so residual sums over node planes telescope into
    differences of layer fluxes.
    """
    mesh = field.mesh
    el = mesh.layer_elements(k)
    quad = mesh.quadrature
    if state is None:
        g = field.gradients(el)
        H = np.asarray(trunc.H(np.einsum("eqi,eqi->eq", g, g)))
    else:
        g, H = state.grad[el], state.H[el]
    upper = (mesh.node_plane[mesh.hexes[el]] > k).astype(float)  # (n, 8)
    dpsi = np.einsum("eqai,ea->eqi", quad.grads[el], upper)
    return float(np.sum(quad.weights[el] * H * np.einsum("eqi,eqi->eq", g, dpsi)))
