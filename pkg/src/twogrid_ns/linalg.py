"""Sparse direct solves for the mean-constrained saddle-point systems."""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

PIVOT_TOL = 1e-13


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


def _first_bad_pivot(a: sp.spmatrix) -> int | None:
    # Only used to diagnose a failed factorization; dense is fine at that point.
    if a.shape[0] > 4000:
        return None
    _, _, u = scipy.linalg.lu(a.toarray())
    d = np.abs(np.diag(u))
    scale = max(d.max(initial=0.0), 1.0)
    bad = np.flatnonzero(d <= PIVOT_TOL * scale)
    return int(bad[0]) if len(bad) else None


class Factorization:
    """Sparse LU (SuperLU, partial pivoting), reusable for many right-hand sides."""

    def __init__(self, matrix):
        a = sp.csc_matrix(matrix)
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"matrix must be square, got {a.shape}")
        self.shape = a.shape
        self.matrix = a
        if a.shape[0] == 0:
            self._lu = None
            return
        try:
            lu = spla.splu(a, permc_spec="COLAMD", diag_pivot_thresh=1.0)
        except RuntimeError as exc:
            pivot = _first_bad_pivot(a)
            raise SingularMatrixError(f"factorization failed: {exc} (pivot {pivot})", pivot) from None
        d = np.abs(lu.U.diagonal())
        bad = np.flatnonzero(d <= PIVOT_TOL * d.max())
        if len(bad):
            col = int(lu.perm_c[bad[0]]) if lu.perm_c is not None else int(bad[0])
            raise SingularMatrixError(f"singular to tolerance at pivot {bad[0]} (column {col})", int(bad[0]))
        self._lu = lu

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.shape[0]:
            raise ValueError(f"right-hand side has {b.shape[0]} rows, expected {self.shape[0]}")
        if self._lu is None:
            return np.zeros_like(b)
        return self._lu.solve(b)


def factorize(a) -> Factorization:
    return Factorization(a)


def csr(a) -> sp.csr_matrix:
    """Canonical CSR: sorted, duplicate-free column indices."""
    m = sp.csr_matrix(a)
    m.sum_duplicates()
    m.sort_indices()
    return m


def saddle_matrix(a_vv, b, areas) -> sp.csr_matrix:
    """Block matrix ``[[A, B^T, 0], [B, 0, a], [0, a^T, 0]]`` where ``a`` holds
    the cell areas, so the last row enforces a zero-mean pressure."""
    a_vv = sp.csr_matrix(a_vv)
    b = sp.csr_matrix(b)
    areas = np.asarray(areas, dtype=float).reshape(-1, 1)
    col = sp.csr_matrix(areas)
    blocks = [
        [a_vv, b.T, None],
        [b, None, col],
        [None, col.T, None],
    ]
    return csr(sp.bmat(blocks, format="csr"))


class SaddleSystem:
    """Factorized augmented saddle-point operator.

    ``solve(f, g, mean)`` returns ``(u, q)`` solving

        [[A, B^T, 0], [B, 0, a], [0, a^T, 0]] [u, q, lam] = [f, g, mean],

    i.e. ``A u + B^T q = f``, ``B u + a lam = g`` and ``sum(a * q) = mean``.

    When constants lie in the kernel of ``B^T`` (homogeneous Dirichlet
    velocity) the dense border row would wreck the fill-reducing ordering.
    In that case the multiplier is eliminated in closed form,
    ``lam = sum(g) / sum(a)``, the last pressure is pinned in the factorized
    matrix, and the zero-mean representative is recovered by a constant
    shift. This reproduces the bordered solution exactly.
    """

    def __init__(self, a_vv, b, areas):
        a_vv = sp.csr_matrix(a_vv)
        b = sp.csr_matrix(b)
        self.nu = a_vv.shape[0]
        self.npr = b.shape[0]
        self.areas = np.asarray(areas, dtype=float)
        self._a_vv, self._b = a_vv, b
        scale = max(abs(b).max() if b.nnz else 0.0, 1.0)
        self.gauge = self.npr > 1 and bool(
            np.abs(b.T @ np.ones(self.npr)).max(initial=0.0) <= 1e-10 * scale
        )
        if self.gauge:
            bp = b[:-1]
            matrix = csr(sp.bmat([[a_vv, bp.T], [bp, None]], format="csr"))
        else:
            matrix = saddle_matrix(a_vv, b, areas)
        self.factorization = factorize(matrix)
        self.multiplier = 0.0

    @property
    def matrix(self) -> sp.csr_matrix:
        """The full bordered matrix (built on demand)."""
        return saddle_matrix(self._a_vv, self._b, self.areas)

    def solve(self, f, g=None, mean=0.0):
        """Solve with right-hand side ``[f, g, mean]``; returns ``(u, q)`` and
        leaves the border multiplier in ``self.multiplier``."""
        f = np.asarray(f, dtype=float)
        g = np.zeros(self.npr) if g is None else np.asarray(g, dtype=float)
        if not self.gauge:
            x = self.factorization.solve(np.concatenate([f, g, [mean]]))
            self.multiplier = float(x[-1])
            return x[: self.nu], x[self.nu : self.nu + self.npr]
        lam = g.sum() / self.areas.sum()
        x = self.factorization.solve(np.concatenate([f, (g - self.areas * lam)[:-1]]))
        q = np.append(x[self.nu :], 0.0)
        q += (mean - np.dot(self.areas, q)) / self.areas.sum()
        self.multiplier = float(lam)
        return x[: self.nu], q


def saddle_solve(a_vv, b, f, g, areas):
    """One-shot solve of the zero-mean augmented system; see ``SaddleSystem``."""
    return SaddleSystem(a_vv, b, areas).solve(f, g)
