"""Element assembly of mass, stiffness, divergence and trilinear operators.

The trilinear form is the skew-symmetrized one,

    b(v, w, phi) = 1/2 (v . grad w, phi) - 1/2 (v . grad phi, w),

so ``b(v, w, w) = 0`` for every discrete ``v`` and ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .space import DofMap, FeFunction, element_values, sample_at_quadrature

ASSEMBLY_DEGREE = 5


@dataclass(frozen=True)
class _Pattern:
    """Scalar P2 sparsity pattern plus the element-entry -> CSR slot map."""

    indptr: np.ndarray
    indices: np.ndarray
    slots: np.ndarray  # (C * 36,)
    block_indptr: np.ndarray
    block_indices: np.ndarray
    block_order: np.ndarray  # gathers 4 concatenated scalar blocks into 2x2 CSR order

    @property
    def nnz(self) -> int:
        return len(self.indices)


def _pattern(dofs: DofMap) -> _Pattern:
    key = "pattern"
    if key in dofs.cache:
        return dofs.cache[key]
    n = dofs.n_velocity_nodes
    cn = dofs.cell_nodes
    rows = np.repeat(cn, 6, axis=1).ravel()
    cols = np.tile(cn, (1, 6)).ravel()
    keys, slots = np.unique(rows * n + cols, return_inverse=True)
    indices = keys % n
    indptr = np.concatenate([[0], np.cumsum(np.bincount(keys // n, minlength=n))])
    nnz = len(keys)
    blocks = [
        [sp.csr_matrix((np.arange(b * nnz, (b + 1) * nnz, dtype=float) + 1.0, indices, indptr), shape=(n, n))
         for b in (2 * r, 2 * r + 1)]
        for r in range(2)
    ]
    big = sp.bmat(blocks, format="csr")
    big.sort_indices()
    pat = _Pattern(indptr, indices, slots.ravel(), big.indptr.copy(), big.indices.copy(),
                   big.data.astype(np.int64) - 1)
    dofs.cache[key] = pat
    return pat


def _scalar_data(pat: _Pattern, local: np.ndarray) -> np.ndarray:
    return np.bincount(pat.slots, weights=local.ravel(), minlength=pat.nnz)


def scalar_matrix(dofs: DofMap, local: np.ndarray) -> sp.csr_matrix:
    pat = _pattern(dofs)
    n = dofs.n_velocity_nodes
    return sp.csr_matrix((_scalar_data(pat, local), pat.indices.copy(), pat.indptr.copy()), shape=(n, n))


def velocity_matrix(dofs: DofMap, blocks) -> sp.csr_matrix:
    """Assemble a (2Nn x 2Nn) matrix from local component blocks.

    ``blocks[r][s]`` is a (C, 6, 6) array coupling test component ``r`` to
    trial component ``s``, or None for a zero block.
    """
    pat = _pattern(dofs)
    zero = np.zeros(pat.nnz)
    data = np.concatenate([
        zero if blocks[r][s] is None else _scalar_data(pat, blocks[r][s])
        for r in range(2) for s in range(2)
    ])
    n = 2 * dofs.n_velocity_nodes
    return sp.csr_matrix((data[pat.block_order], pat.block_indices.copy(), pat.block_indptr.copy()), shape=(n, n))


def scatter_velocity(dofs: DofMap, local: np.ndarray) -> np.ndarray:
    """Sum a (C, 6, 2) element vector into the global velocity ordering."""
    nn = dofs.n_velocity_nodes
    idx = dofs.cell_nodes.ravel()
    return np.concatenate([
        np.bincount(idx, weights=local[:, :, r].ravel(), minlength=nn) for r in range(2)
    ])


@dataclass(frozen=True)
class AssembledForms:
    M: sp.csr_matrix  # (u, phi), velocity
    A: sp.csr_matrix  # (grad u, grad phi), velocity
    B: sp.csr_matrix  # (chi, div phi), pressure x velocity
    areas: np.ndarray


def assemble_static(mesh: Mesh, dofs: DofMap | None = None) -> AssembledForms:
    if dofs is None:
        from .space import build_dof_map

        dofs = build_dof_map(mesh)
    key = "static"
    if key in dofs.cache:
        return dofs.cache[key]
    ev = element_values(dofs, ASSEMBLY_DEGREE)
    mass = np.einsum("cq,qi,qj->cij", ev.weights, ev.phi, ev.phi)
    stiff = np.einsum("cq,cqid,cqjd->cij", ev.weights, ev.grad, ev.grad)
    M = velocity_matrix(dofs, [[mass, None], [None, mass]])
    A = velocity_matrix(dofs, [[stiff, None], [None, stiff]])

    nn = dofs.n_velocity_nodes
    div = np.einsum("cq,cqid->cid", ev.weights, ev.grad)  # int_K d phi_i / d x_d
    nc = mesh.n_cells
    rows = np.repeat(np.arange(nc), 12)
    cols = np.concatenate([dofs.cell_nodes, dofs.cell_nodes + nn], axis=1).ravel()
    vals = np.concatenate([div[:, :, 0], div[:, :, 1]], axis=1).ravel()
    B = sp.coo_matrix((vals, (rows, cols)), shape=(nc, 2 * nn)).tocsr()
    B.sum_duplicates()
    B.sort_indices()
    forms = AssembledForms(M, A, B, mesh.cell_areas())
    dofs.cache[key] = forms
    return forms


@dataclass(frozen=True)
class TrilinearOperator:
    """``N1[i, j] = b(w, phi_j, phi_i)`` and ``N2[i, j] = b(phi_j, w, phi_i)``."""

    N1: sp.csr_matrix
    N2: sp.csr_matrix

    @property
    def jacobian_part(self) -> sp.csr_matrix:
        return self.N1 + self.N2


def _dot2(a, b):
    """Contract the trailing length-2 axis: a (C, Q, 2) with b (C, Q, 6, 2)."""
    return a[:, :, None, 0] * b[..., 0] + a[:, :, None, 1] * b[..., 1]


def _trilinear_locals(w: FeFunction, target: DofMap):
    ev = element_values(target, ASSEMBLY_DEGREE)
    wv, wg = sample_at_quadrature(w, target, ASSEMBLY_DEGREE)
    W = ev.weights
    wphi = W[:, :, None] * ev.phi[None]  # (C, Q, 6)
    adv = _dot2(wv, ev.grad)  # w . grad phi_j
    t = np.matmul(wphi.transpose(0, 2, 1), adv)
    s1 = 0.5 * (t - t.transpose(0, 2, 1))
    phiphi = (ev.phi[:, :, None] * ev.phi[:, None, :]).reshape(len(ev.phi), 36)
    nc = W.shape[0]
    n2 = [[None, None], [None, None]]
    for r in range(2):
        for s in range(2):
            first = ((W * wg[:, :, r, s]) @ phiphi).reshape(nc, 6, 6)
            second = np.matmul(ev.grad[:, :, :, s].transpose(0, 2, 1), wphi * wv[:, :, r, None])
            n2[r][s] = 0.5 * (first - second)
    return s1, n2


def assemble_trilinear_matrices(w: FeFunction, target: DofMap) -> TrilinearOperator:
    """Linearized convection operators for a fixed field ``w`` (any mesh)."""
    s1, n2 = _trilinear_locals(w, target)
    N1 = velocity_matrix(target, [[s1, None], [None, s1]])
    N2 = velocity_matrix(target, n2)
    return TrilinearOperator(N1, N2)


def linearized_convection(w: FeFunction, target: DofMap) -> sp.csr_matrix:
    """``N1(w) + N2(w)`` assembled in a single pass."""
    s1, n2 = _trilinear_locals(w, target)
    return velocity_matrix(target, [[s1 + n2[0][0], n2[0][1]], [n2[1][0], s1 + n2[1][1]]])


def trilinear_vector(u: FeFunction, v: FeFunction, target: DofMap) -> np.ndarray:
    """Entries ``b(u, v, phi_i)`` over the velocity test functions of ``target``."""
    ev = element_values(target, ASSEMBLY_DEGREE)
    uv, _ = sample_at_quadrature(u, target, ASSEMBLY_DEGREE)
    vv, vg = sample_at_quadrature(v, target, ASSEMBLY_DEGREE)
    wphi = ev.weights[:, :, None] * ev.phi[None]  # (C, Q, 6)
    conv = uv[:, :, None, 0] * vg[..., 0] + uv[:, :, None, 1] * vg[..., 1]  # u . grad v_r
    adv = _dot2(uv, ev.grad)  # u . grad phi_i
    local = 0.5 * (
        np.matmul(wphi.transpose(0, 2, 1), conv)
        - np.matmul((ev.weights[:, :, None] * adv).transpose(0, 2, 1), vv)
    )
    return scatter_velocity(target, local)


def assemble_load(fn, dofs: DofMap, degree: int = ASSEMBLY_DEGREE) -> np.ndarray:
    """``(f, phi_i)`` for a vector field ``fn(x, y) -> (fx, fy)``."""
    ev = element_values(dofs, degree)
    x, y = ev.points[..., 0], ev.points[..., 1]
    f = np.asarray(fn(x, y), dtype=float)
    f = np.broadcast_to(f, (2,) + x.shape)
    local = np.einsum("cq,qi,rcq->cir", ev.weights, ev.phi, f)
    return scatter_velocity(dofs, local)


def apply_dirichlet(a_vv, b, f, dofs: DofMap):
    """Drop boundary velocity rows/columns (homogeneous data).

    Returns the interior velocity block, the divergence block restricted to
    interior columns and the interior part of ``f``.
    """
    inner = dofs.interior_velocity_dofs
    a_ii = None if a_vv is None else sp.csr_matrix(a_vv)[inner][:, inner]
    b_i = None if b is None else sp.csc_matrix(b)[:, inner].tocsr()
    f_i = None if f is None else np.asarray(f)[inner]
    return a_ii, b_i, f_i


def embed(u_inner: np.ndarray, dofs: DofMap) -> np.ndarray:
    """Re-insert interior values into a full velocity vector with zero boundary."""
    u = np.zeros(dofs.n_velocity_dofs)
    u[dofs.interior_velocity_dofs] = u_inner
    return u
