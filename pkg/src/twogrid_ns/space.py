"""P2 velocity / P0 pressure spaces, quadrature and point evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from .mesh import Mesh, locate_points

VELOCITY = "velocity"
PRESSURE = "pressure"


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (Q, 3) barycentric
    weights: np.ndarray  # (Q,), sum to 1/2
    exactness_degree: int


def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(a, a, b), (a, b, a), (b, a, a)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _build_rule(groups, degree):
    pts, wts = [], []
    for orbit, w in groups:
        pts.extend(orbit)
        wts.extend([w] * len(orbit))
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), degree)


def _make_rules():
    r15 = sqrt(15.0)
    rules = {
        2: _build_rule([(_orbit3(1.0 / 6.0), 1.0 / 3.0)], 2),
        5: _build_rule(
            [
                ([(1 / 3, 1 / 3, 1 / 3)], 9.0 / 40.0),
                (_orbit3((6.0 - r15) / 21.0), (155.0 - r15) / 1200.0),
                (_orbit3((6.0 + r15) / 21.0), (155.0 + r15) / 1200.0),
            ],
            5,
        ),
        # 16-point fully symmetric rule (Dunavant), exact to degree 8, positive weights
        7: _build_rule(
            [
                ([(1 / 3, 1 / 3, 1 / 3)], 0.144315607677787),
                (_orbit3(0.459292588292723), 0.095091634267285),
                (_orbit3(0.170569307751760), 0.103217370534718),
                (_orbit3(0.050547228317031), 0.032458497623198),
                (_orbit6(0.263112829634638, 0.008394777409958), 0.027230314174435),
            ],
            8,
        ),
    }
    return rules


_RULES = _make_rules()


def quadrature_rule(degree: int) -> QuadratureRule:
    """Symmetric Gauss rule on the reference triangle (area 1/2).

    Supported degrees are 2 (3 points), 5 (7 points) and 7 (16 points,
    actually exact through degree 8).
    """
    try:
        return _RULES[degree]
    except KeyError:
        raise ValueError(f"unsupported quadrature degree {degree}; choose 2, 5 or 7") from None


_DLAM = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])  # d(lambda_k)/d(xi, eta)
_EDGE_PAIRS = ((0, 1), (1, 2), (2, 0))


def p2_basis(lam):
    """Quadratic Lagrange basis at barycentric coordinates ``lam`` (..., 3).

    Returns values (..., 6) and reference gradients (..., 6, 2). Nodes 0-2 are
    the vertices, 3-5 the midpoints of edges (0,1), (1,2), (2,0).
    """
    lam = np.asarray(lam, dtype=float)
    vals = np.empty(lam.shape[:-1] + (6,))
    grads = np.empty(lam.shape[:-1] + (6, 2))
    for k in range(3):
        vals[..., k] = lam[..., k] * (2.0 * lam[..., k] - 1.0)
        grads[..., k, :] = (4.0 * lam[..., k, None] - 1.0) * _DLAM[k]
    for m, (a, b) in enumerate(_EDGE_PAIRS):
        vals[..., 3 + m] = 4.0 * lam[..., a] * lam[..., b]
        grads[..., 3 + m, :] = 4.0 * (lam[..., a, None] * _DLAM[b] + lam[..., b, None] * _DLAM[a])
    return vals, grads


@dataclass(eq=False)
class DofMap:
    """Numbering of P2 velocity nodes and P0 pressure cells.

    Nodes are the mesh vertices followed by the edge midpoints. Velocity DOF
    ``c * n_velocity_nodes + node`` is component ``c`` (0 = x, 1 = y) at that
    node. Pressure DOF ``c`` is the constant on cell ``c``.
    """

    mesh: Mesh
    cell_nodes: np.ndarray  # (C, 6)
    node_coords: np.ndarray  # (Nn, 2)
    boundary_nodes: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_velocity_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def n_velocity_dofs(self) -> int:
        return 2 * self.n_velocity_nodes

    @property
    def n_pressure_dofs(self) -> int:
        return self.mesh.n_cells

    @property
    def boundary_velocity_dofs(self) -> np.ndarray:
        return np.concatenate([self.boundary_nodes, self.boundary_nodes + self.n_velocity_nodes])

    @property
    def interior_velocity_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_velocity_dofs, dtype=bool)
        mask[self.boundary_velocity_dofs] = False
        return np.flatnonzero(mask)


def build_dof_map(mesh: Mesh) -> DofMap:
    key = "dofmap"
    if key in mesh.cache:
        return mesh.cache[key]
    nv = mesh.n_vertices
    cell_nodes = np.hstack([mesh.cells, nv + mesh.cell_edges])
    mid = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    coords = np.vstack([mesh.vertices, mid])
    bedges = mesh.boundary_edges()
    bverts = np.unique(mesh.edges[bedges])
    bnodes = np.concatenate([bverts, nv + bedges])
    dofs = DofMap(mesh, cell_nodes, coords, bnodes)
    mesh.cache[key] = dofs
    return dofs


@dataclass(frozen=True)
class ElementValues:
    """Basis data at the quadrature points of every cell."""

    points: np.ndarray  # (C, Q, 2) physical coordinates
    weights: np.ndarray  # (C, Q) physical quadrature weights
    phi: np.ndarray  # (Q, 6)
    grad: np.ndarray  # (C, Q, 6, 2) physical gradients


def _inverse_jacobians(mesh: Mesh):
    p = mesh.vertices[mesh.cells]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns d x/d xi, d x/d eta
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1] / det
    inv[:, 1, 1] = jac[:, 0, 0] / det
    inv[:, 0, 1] = -jac[:, 0, 1] / det
    inv[:, 1, 0] = -jac[:, 1, 0] / det
    return p, det, inv


def element_values(dofs: DofMap, degree: int) -> ElementValues:
    key = ("element_values", degree)
    if key in dofs.cache:
        return dofs.cache[key]
    rule = quadrature_rule(degree)
    p, det, inv = _inverse_jacobians(dofs.mesh)
    phi, dref = p2_basis(rule.points)
    points = np.einsum("qk,ckd->cqd", rule.points, p)
    weights = det[:, None] * rule.weights[None, :]
    # grad_x phi = J^{-T} grad_ref phi
    grad = np.einsum("qie,ced->cqid", dref, inv)
    ev = ElementValues(points, weights, phi, grad)
    dofs.cache[key] = ev
    return ev


@dataclass(eq=False)
class FeFunction:
    space: str
    coefficients: np.ndarray
    dofs: DofMap

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        size = self.dofs.n_velocity_dofs if self.space == VELOCITY else self.dofs.n_pressure_dofs
        if self.space not in (VELOCITY, PRESSURE):
            raise ValueError(f"unknown space {self.space!r}")
        if self.coefficients.shape != (size,):
            raise ValueError(f"expected {size} coefficients, got {self.coefficients.shape}")

    @property
    def mesh(self) -> Mesh:
        return self.dofs.mesh

    def nodal(self) -> np.ndarray:
        """Velocity coefficients as an (Nn, 2) array."""
        return self.coefficients.reshape(2, -1).T

    def copy(self) -> "FeFunction":
        return FeFunction(self.space, self.coefficients.copy(), self.dofs)


def zero_velocity(dofs: DofMap) -> FeFunction:
    return FeFunction(VELOCITY, np.zeros(dofs.n_velocity_dofs), dofs)


def zero_pressure(dofs: DofMap) -> FeFunction:
    return FeFunction(PRESSURE, np.zeros(dofs.n_pressure_dofs), dofs)


def evaluate(f: FeFunction, points, gradient: bool = False):
    """Evaluate ``f`` at arbitrary points of the closed unit square.

    Velocity values have shape (P, 2) and gradients (P, 2, 2) indexed
    ``[point, component, derivative]``. Pressure values are (P,) with zero
    gradient.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    cells, lam = locate_points(f.mesh, pts)
    if f.space == PRESSURE:
        vals = f.coefficients[cells]
        return (vals, np.zeros((len(vals), 2))) if gradient else vals
    vals_ref, dref = p2_basis(lam)
    coef = f.nodal()[f.dofs.cell_nodes[cells]]  # (P, 6, 2)
    vals = np.einsum("pi,pic->pc", vals_ref, coef)
    if not gradient:
        return vals
    _, _, inv = _inverse_jacobians(f.mesh)
    dphys = np.einsum("pie,ped->pid", dref, inv[cells])
    grads = np.einsum("pid,pic->pcd", dphys, coef)
    return vals, grads


def sample_at_quadrature(f: FeFunction, target: DofMap, degree: int = 5):
    """Values (C, Q, 2) and gradients (C, Q, 2, 2) of a velocity field at the
    quadrature points of ``target``; ``f`` may live on a different mesh."""
    ev = element_values(target, degree)
    if f.dofs is target:
        coef = f.nodal()[target.cell_nodes]  # (C, 6, 2)
        vals = np.matmul(ev.phi[None], coef)
        grads = np.matmul(coef.transpose(0, 2, 1)[:, None], ev.grad)
        return vals, grads
    cells, phi, dphys = _cross_tables(f.dofs, target, degree)
    coef = f.nodal()[f.dofs.cell_nodes[cells]]  # (P, 6, 2)
    shape = ev.points.shape[:2]
    vals = np.matmul(phi[:, None, :], coef).reshape(shape + (2,))
    grads = np.matmul(coef.transpose(0, 2, 1), dphys).reshape(shape + (2, 2))
    return vals, grads


def _cross_tables(source: DofMap, target: DofMap, degree: int):
    """Source-mesh basis data at the target quadrature points."""
    key = ("cross", source.mesh, degree)
    if key not in target.cache:
        pts = element_values(target, degree).points.reshape(-1, 2)
        cells, lam = locate_points(source.mesh, pts)
        phi, dref = p2_basis(lam)
        _, _, inv = _inverse_jacobians(source.mesh)
        target.cache[key] = (cells, phi, np.einsum("pie,ped->pid", dref, inv[cells]))
    return target.cache[key]


def interpolate(fn, dofs: DofMap, space: str = VELOCITY) -> FeFunction:
    """Nodal interpolant. ``fn(x, y)`` returns the two velocity components
    (or the pressure value) for array arguments; P0 samples cell centroids."""
    if space == VELOCITY:
        x, y = dofs.node_coords.T
        u = np.asarray(fn(x, y), dtype=float)
        u = np.broadcast_to(u, (2, len(x)))
        return FeFunction(VELOCITY, np.concatenate([u[0], u[1]]), dofs)
    centroids = dofs.mesh.vertices[dofs.mesh.cells].mean(axis=1)
    vals = np.broadcast_to(np.asarray(fn(centroids[:, 0], centroids[:, 1]), dtype=float), (len(centroids),))
    return FeFunction(PRESSURE, vals.copy(), dofs)
