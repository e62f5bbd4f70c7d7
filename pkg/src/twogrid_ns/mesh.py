"""Structured triangulations of the unit square."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform right-triangle mesh of [0,1]^2.

    Every one of the ``n x n`` squares is split along its lower-left to
    upper-right diagonal into a lower cell ``(v00, v10, v11)`` and an upper
    cell ``(v00, v11, v01)``, both counterclockwise. Square ``(i, j)`` owns
    cells ``2*(j*n + i)`` (lower) and ``2*(j*n + i) + 1`` (upper).
    """

    n: int
    vertices: np.ndarray  # (V, 2)
    cells: np.ndarray  # (C, 3) vertex indices, counterclockwise
    edges: np.ndarray  # (E, 2) vertex indices, lower index first
    cell_edges: np.ndarray  # (C, 3) edge k joins local vertices k and (k+1) % 3
    edge_cells: np.ndarray  # (E, 2) adjacent cells, -1 on the boundary
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def h(self) -> float:
        return float(np.sqrt(2.0) / self.n)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def cell_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] < 0)


def build_structured_mesh(n: int) -> Mesh:
    """Build the ``n x n`` structured mesh of the unit square."""
    if int(n) != n or n < 1:
        raise ValueError(f"mesh subdivisions must be a positive integer, got {n!r}")
    n = int(n)
    s = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(s, s, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([v00, v10, v11])
    cells[1::2] = np.column_stack([v00, v11, v01])

    local = np.stack([cells, np.roll(cells, -1, axis=1)], axis=2)  # (C, 3, 2)
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    cell_edges = inverse.reshape(-1, 3)

    edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
    owner = np.repeat(np.arange(len(cells)), 3)
    order = np.argsort(inverse, kind="stable")
    sorted_edges = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_edges[1:] != sorted_edges[:-1]
    edge_cells[sorted_edges[first], 0] = owner[order][first]
    edge_cells[sorted_edges[~first], 1] = owner[order][~first]

    return Mesh(n, vertices, cells, edges, cell_edges, edge_cells)


def locate_points(mesh: Mesh, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized point location.

    Returns the owning cell of each point and its barycentric coordinates
    with respect to that cell's vertices. Points on shared edges or vertices
    go to the lowest-indexed cell containing them.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    tol = 1e-14
    if np.any(p < -tol) or np.any(p > 1.0 + tol):
        raise ValueError("point outside the closed unit square")
    n = mesh.n
    s = np.clip(p * n, 0.0, n)
    # on a grid line prefer the left/bottom square: it holds the lower cell index
    ij = np.clip(np.ceil(s) - 1.0, 0, n - 1).astype(np.int64)
    d = np.clip(s - ij, 0.0, 1.0)
    dx, dy = d[:, 0], d[:, 1]
    lower = dx >= dy
    cell = 2 * (ij[:, 1] * n + ij[:, 0]) + (~lower)
    lam = np.where(
        lower[:, None],
        np.column_stack([1.0 - dx, dx - dy, dy]),
        np.column_stack([1.0 - dy, dx, dy - dx]),
    )
    lam = np.clip(lam, 0.0, 1.0)
    return cell, lam


def locate_point(mesh: Mesh, p) -> tuple[int, np.ndarray]:
    cells, lam = locate_points(mesh, np.asarray(p, dtype=float).reshape(1, 2))
    return int(cells[0]), lam[0]
