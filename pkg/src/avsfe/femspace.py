"""Lagrange finite element spaces on triangle meshes.

Reference triangle has vertices (0, 0), (1, 0), (0, 1). Local scalar
nodes are ordered vertices first, then edge midpoints in local-edge order
(edges opposite vertex 0, 1, 2). Vector-valued spaces stack components:
local index ``c * nb + i``, global index ``c * n_scalar + scalar_dof``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import LOCAL_EDGES, Mesh

CONTINUOUS = "continuous"
BROKEN = "broken"
SUPPORTED_DEGREES = (1, 2, 3)

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    order: int


@lru_cache(maxsize=None)
def edge_quadrature(order: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1], exact for degree ``order``."""
    if order < 0:
        raise ValueError("order must be non-negative")
    n = max(1, (order + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, order)


@lru_cache(maxsize=None)
def triangle_quadrature(order: int) -> QuadratureRule:
    """Collapsed Gauss rule on the reference triangle, exact for degree ``order``."""
    if order < 0:
        raise ValueError("order must be non-negative")
    # Duffy map (s, r) -> (s (1 - r), r) adds one degree in r
    n = max(1, (order + 3) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    s, ws = 0.5 * (x + 1.0), 0.5 * w
    S, R = np.meshgrid(s, s, indexing="ij")
    W = np.outer(ws, ws) * (1.0 - R)
    pts = np.column_stack([(S * (1.0 - R)).ravel(), R.ravel()])
    return QuadratureRule(pts, W.ravel(), order)


@lru_cache(maxsize=None)
def _lagrange_nodes(p: int) -> np.ndarray:
    if p == 1:
        return REF_VERTICES.copy()
    if p == 2:
        mids = 0.5 * (REF_VERTICES[LOCAL_EDGES[:, 0]] + REF_VERTICES[LOCAL_EDGES[:, 1]])
        return np.vstack([REF_VERTICES, mids])
    if p == 3:
        a, b = REF_VERTICES[LOCAL_EDGES[:, 0]], REF_VERTICES[LOCAL_EDGES[:, 1]]
        edge = np.vstack([np.stack([a[k] + (b[k] - a[k]) / 3, a[k] + 2 * (b[k] - a[k]) / 3])
                          for k in range(3)])
        return np.vstack([REF_VERTICES, edge, [[1 / 3, 1 / 3]]])
    raise ValueError(f"unsupported degree {p}")


def lagrange_nodes(p: int) -> np.ndarray:
    """Reference coordinates of the local nodes of P^p."""
    return _lagrange_nodes(p).copy()


def _monomials(p: int, pts: np.ndarray):
    x, y = pts[:, 0], pts[:, 1]
    exps = [(i, k - i) for k in range(p + 1) for i in range(k, -1, -1)]
    V = np.stack([x**i * y**j for i, j in exps], axis=-1)
    dx = np.stack([i * x ** max(i - 1, 0) * y**j for i, j in exps], axis=-1)
    dy = np.stack([j * x**i * y ** max(j - 1, 0) for i, j in exps], axis=-1)
    return V, np.stack([dx, dy], axis=-1)


@lru_cache(maxsize=None)
def _nodal_coefficients(p: int) -> np.ndarray:
    V, _ = _monomials(p, _lagrange_nodes(p))
    return np.linalg.inv(V)


def lagrange_basis(p: int, points) -> tuple[np.ndarray, np.ndarray]:
    """Values ``(npts, nb)`` and reference gradients ``(npts, nb, 2)`` of P^p."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    C = _nodal_coefficients(p)
    V, dV = _monomials(p, pts)
    return V @ C, np.einsum("qmd,mb->qbd", dV, C)


def n_local(p: int) -> int:
    return (p + 1) * (p + 2) // 2


def edge_reference_points(k: int, s) -> np.ndarray:
    """Map edge parameter ``s`` in [0, 1] onto local edge ``k`` of the reference triangle."""
    a, b = REF_VERTICES[LOCAL_EDGES[k]]
    s = np.asarray(s, dtype=float)
    return a[None, :] + s[:, None] * (b - a)[None, :]


class FESpace:
    """Scalar or vector Lagrange space, continuous or element-wise broken."""

    def __init__(self, mesh: Mesh, family: str, degree: int, ncomp: int = 1):
        if family not in (CONTINUOUS, BROKEN):
            raise ValueError(f"unknown family {family!r}")
        if degree not in SUPPORTED_DEGREES:
            raise ValueError(f"unsupported degree {degree}; supported: {SUPPORTED_DEGREES}")
        if ncomp not in (1, 2):
            raise ValueError("value shape must have 1 or 2 components")
        self.mesh = mesh
        self.family = family
        self.degree = degree
        self.ncomp = ncomp
        self.nb = n_local(degree)
        nt = mesh.n_triangles
        if family == BROKEN:
            self.scalar_dofs = np.arange(nt * self.nb).reshape(nt, self.nb)
            self.n_scalar = nt * self.nb
        else:
            self.scalar_dofs, self.n_scalar = self._continuous_numbering()
        if family == BROKEN:
            # element-major so that each element's dofs are contiguous
            base = np.arange(nt)[:, None] * (ncomp * self.nb)
            self.dof_map = base + np.arange(ncomp * self.nb)[None, :]
        else:
            self.dof_map = np.hstack([self.scalar_dofs + c * self.n_scalar for c in range(ncomp)])
        self.dof_count = ncomp * self.n_scalar

    def _continuous_numbering(self):
        mesh, p = self.mesh, self.degree
        nv, ne, nt = mesh.n_vertices, mesh.n_edges, mesh.n_triangles
        cols = [mesh.triangles]
        n = nv
        if p >= 2:
            per_edge = p - 1
            ed = mesh.tri_edges
            if per_edge == 1:
                cols.append(n + ed)
            else:
                # orient edge-interior nodes by the global edge direction
                first = mesh.triangles[:, LOCAL_EDGES[:, 0]]
                forward = first == mesh.edges[ed, 0]
                for k in range(3):
                    lo = n + ed[:, k] * per_edge
                    cols_k = np.where(forward[:, k, None], lo[:, None] + np.arange(per_edge),
                                      lo[:, None] + np.arange(per_edge)[::-1])
                    cols.append(cols_k)
            n += per_edge * ne
        if p >= 3:
            cols.append(n + np.arange(nt)[:, None])
            n += nt
        return np.hstack(cols).astype(np.int64), n

    @property
    def is_continuous(self) -> bool:
        return self.family == CONTINUOUS

    def basis(self, ref_points):
        return lagrange_basis(self.degree, ref_points)

    def node_coordinates(self) -> np.ndarray:
        """Physical coordinates of every scalar dof."""
        ref = _lagrange_nodes(self.degree)
        p = self.mesh.vertices[self.mesh.triangles]
        phys = p[:, :1, :] + np.einsum("tij,nj->tni", np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], -1), ref)
        out = np.empty((self.n_scalar, 2))
        out[self.scalar_dofs.ravel()] = phys.reshape(-1, 2)
        return out

    def interpolate(self, func) -> "Field":
        """Nodal interpolant of ``func(points) -> (n,) or (n, ncomp)``."""
        vals = np.asarray(func(self.node_coordinates()), dtype=float)
        if self.ncomp == 1:
            coeffs = vals.reshape(self.n_scalar)
        else:
            vals = vals.reshape(self.n_scalar, self.ncomp)
            coeffs = np.empty(self.dof_count)
            if self.family == BROKEN:
                sd = self.scalar_dofs
                for c in range(self.ncomp):
                    coeffs[self.dof_map[:, c * self.nb:(c + 1) * self.nb]] = vals[sd, c]
            else:
                coeffs = vals.T.ravel().copy()
        return Field(self, coeffs)

    def __repr__(self):
        return (f"FESpace({self.family}, P{self.degree}, ncomp={self.ncomp}, "
                f"dofs={self.dof_count})")


def make_space(mesh: Mesh, family: str = CONTINUOUS, degree: int = 1, value_shape=1) -> FESpace:
    if value_shape in ("scalar", None):
        value_shape = 1
    elif value_shape in ("vector", "2-vector"):
        value_shape = 2
    return FESpace(mesh, family, int(degree), int(value_shape))


def eval_basis(space: FESpace, tri_id: int, reference_points):
    """Basis values and reference gradients of one element's local basis.

    The local basis is the same on every element; ``tri_id`` is accepted
    for interface symmetry and validated.
    """
    if not 0 <= tri_id < space.mesh.n_triangles:
        raise ValueError("triangle id out of range")
    return space.basis(reference_points)


class Field:
    """Coefficient vector bound to an :class:`FESpace`."""

    def __init__(self, space: FESpace, coeffs=None):
        self.space = space
        if coeffs is None:
            coeffs = np.zeros(space.dof_count)
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.dof_count,):
            raise ValueError(f"expected {space.dof_count} coefficients, got {coeffs.shape}")
        self.coeffs = coeffs

    def local_coeffs(self, tri_ids=None) -> np.ndarray:
        """``(n, ncomp, nb)`` element coefficients."""
        dm = self.space.dof_map if tri_ids is None else self.space.dof_map[tri_ids]
        return self.coeffs[dm].reshape(len(dm), self.space.ncomp, self.space.nb)

    def evaluate(self, tri_ids, ref_points) -> np.ndarray:
        """Values ``(n, npts, ncomp)`` at reference points of the given elements."""
        tri_ids = np.atleast_1d(tri_ids)
        phi, _ = self.space.basis(ref_points)
        return np.einsum("qb,tcb->tqc", phi, self.local_coeffs(tri_ids))

    def gradient(self, tri_ids, ref_points) -> np.ndarray:
        """Physical gradients ``(n, npts, ncomp, 2)``."""
        tri_ids = np.atleast_1d(tri_ids)
        _, dphi = self.space.basis(ref_points)
        p = self.space.mesh.vertices[self.space.mesh.triangles[tri_ids]]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        invJT = np.linalg.inv(J).transpose(0, 2, 1)
        g = np.einsum("tij,qbj->tqbi", invJT, dphi)
        return np.einsum("tqbi,tcb->tqci", g, self.local_coeffs(tri_ids))

    def vertex_values(self) -> np.ndarray:
        """``(n_vertices, ncomp)`` values (averaged for broken spaces)."""
        mesh = self.space.mesh
        vals = self.evaluate(np.arange(mesh.n_triangles), REF_VERTICES)
        out = np.zeros((mesh.n_vertices, self.space.ncomp))
        cnt = np.zeros(mesh.n_vertices)
        np.add.at(out, mesh.triangles.ravel(), vals.reshape(-1, self.space.ncomp))
        np.add.at(cnt, mesh.triangles.ravel(), 1.0)
        return out / cnt[:, None]

    def copy(self) -> "Field":
        return Field(self.space, self.coeffs.copy())

    def __repr__(self):
        return f"Field({self.space!r})"


def _check_edge(field: Field, tri_id: int, edge_of_triangle: int):
    if not 0 <= tri_id < field.space.mesh.n_triangles:
        raise ValueError("triangle id out of range")
    if edge_of_triangle not in (0, 1, 2):
        raise ValueError(f"edge {edge_of_triangle} is not a local edge of a triangle")


def trace_eval(field: Field, tri_id: int, edge_of_triangle: int, edge_points) -> np.ndarray:
    """Restriction of the element polynomial to a local edge, at parameters in [0, 1]."""
    _check_edge(field, tri_id, edge_of_triangle)
    ref = edge_reference_points(edge_of_triangle, edge_points)
    vals = field.evaluate([tri_id], ref)[0]
    return vals[:, 0] if field.space.ncomp == 1 else vals


def outward_normal(mesh: Mesh, tri_id: int, edge_of_triangle: int) -> np.ndarray:
    p = mesh.vertices[mesh.triangles[tri_id]]
    a, b = p[LOCAL_EDGES[edge_of_triangle]]
    d = b - a
    return np.array([d[1], -d[0]]) / np.hypot(*d)


def normal_trace_eval(field: Field, tri_id: int, edge_of_triangle: int, edge_points) -> np.ndarray:
    """``w . n`` with the outward normal of ``tri_id`` on the given local edge.

    One-component fields are treated as the x-component (the spatial
    direction of an (x, t) mesh).
    """
    _check_edge(field, tri_id, edge_of_triangle)
    n = outward_normal(field.space.mesh, tri_id, edge_of_triangle)
    ref = edge_reference_points(edge_of_triangle, edge_points)
    vals = field.evaluate([tri_id], ref)[0]
    return vals @ n[: field.space.ncomp]


def edge_local_nodes(p: int, k: int) -> np.ndarray:
    """Local node indices of P^p lying on local edge ``k``."""
    a, b = LOCAL_EDGES[k]
    if p == 1:
        return np.array([a, b])
    if p == 2:
        return np.array([a, b, 3 + k])
    if p == 3:
        return np.array([a, b, 3 + 2 * k, 4 + 2 * k])
    raise ValueError(f"unsupported degree {p}")
