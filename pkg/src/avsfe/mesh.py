"""Conforming triangular meshes with boundary tags and newest-vertex bisection.

Triangles are stored positively oriented with the refinement edge opposite
local vertex 0 (the "newest" vertex). Local edge ``k`` is the edge opposite
local vertex ``k``, i.e. edges ``(1, 2)``, ``(2, 0)`` and ``(0, 1)``, so
edge 0 is always the refinement edge.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


class Tag(enum.IntEnum):
    INTERIOR = 0
    INFLOW = 1
    OUTFLOW = 2
    INITIAL_TIME = 3
    FINAL_TIME = 4

    @classmethod
    def parse(cls, value) -> "Tag":
        if isinstance(value, Tag):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown boundary tag {value!r}") from None
        return cls(int(value))


#: Dirichlet data on the spatial sides, u0 at t-min, free at t-max.
SPACETIME_TAGS = {"left": Tag.INFLOW, "right": Tag.INFLOW,
                  "bottom": Tag.INITIAL_TIME, "top": Tag.FINAL_TIME}
#: Dirichlet data (weakly imposed) on the whole boundary.
DIRICHLET_TAGS = {"left": Tag.INFLOW, "right": Tag.INFLOW,
                  "bottom": Tag.INFLOW, "top": Tag.INFLOW}


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


class Mesh:
    """Immutable 2D conforming triangle mesh.

    Parameters
    ----------
    vertices : (nv, 2) array
    triangles : (nt, 3) int array
        Positively oriented; local edge 0 is the refinement edge.
    boundary_tags : mapping
        ``(a, b) -> Tag`` for every boundary edge, keys with ``a < b``.
    parents : (nt,) int array, optional
        Index of the pre-refinement triangle each triangle came from.
    """

    def __init__(self, vertices, triangles, boundary_tags: Mapping, parents=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.boundary_tags = {_edge_key(*k): Tag.parse(v) for k, v in boundary_tags.items()}
        self.parents = None if parents is None else np.asarray(parents, dtype=np.int64)
        self.vertices.flags.writeable = False
        self.triangles.flags.writeable = False
        self._build_connectivity()

    # -- construction -------------------------------------------------------
    @classmethod
    def from_triangles(cls, vertices, triangles, boundary_tags: Mapping) -> "Mesh":
        """Orient triangles and put the longest edge opposite local vertex 0.

        Ties between equally long edges go to the edge with the lowest
        (min vertex, max vertex) index pair.
        """
        vertices = np.asarray(vertices, dtype=float)
        tris = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        p = vertices[tris]
        area2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                 - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
        if np.any(np.abs(area2) <= 1e-14 * max(1.0, np.abs(area2).max())):
            raise ValueError("degenerate triangle in input")
        neg = area2 < 0
        tris[neg] = tris[neg][:, [0, 2, 1]]
        out = np.empty_like(tris)
        for i, t in enumerate(tris):
            best = None
            for k in range(3):
                a, b = t[LOCAL_EDGES[k]]
                length = np.hypot(*(vertices[a] - vertices[b]))
                key = (-round(length, 12), *_edge_key(a, b))
                if best is None or key < best[0]:
                    best = (key, k)
            k = best[1]
            out[i] = np.roll(t, -k)
        return cls(vertices, out, boundary_tags)

    def _build_connectivity(self):
        tris = self.triangles
        nt = len(tris)
        pairs = tris[:, LOCAL_EDGES].reshape(-1, 2)
        keys = np.sort(pairs, axis=1)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        self.edges = edges
        self.tri_edges = inverse.reshape(nt, 3)
        counts = np.bincount(inverse, minlength=len(edges))
        if counts.max(initial=0) > 2:
            bad = edges[np.argmax(counts)]
            raise ValueError(f"edge {tuple(bad)} shared by more than two triangles")
        owner = np.repeat(np.arange(nt), 3)
        order = np.argsort(inverse, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
        edge_tris[:, 0] = owner[order[starts]]
        two = counts == 2
        edge_tris[two, 1] = owner[order[starts[two] + 1]]
        self.edge_tris = edge_tris

        tags = np.zeros(len(edges), dtype=np.int64)
        if self.boundary_tags:
            keys = np.array(list(self.boundary_tags.keys()), dtype=np.int64)
            nv = max(len(self.vertices), int(keys.max()) + 1, 1)
            codes = edges[:, 0] * nv + edges[:, 1]
            vals = np.array([int(v) for v in self.boundary_tags.values()], dtype=np.int64)
            pos = np.searchsorted(codes, keys[:, 0] * nv + keys[:, 1])
            pos = np.clip(pos, 0, len(codes) - 1)
            hit = codes[pos] == keys[:, 0] * nv + keys[:, 1]
            if not hit.all():
                raise ValueError("boundary tag on an edge that is not in the mesh")
            tags[pos] = vals
        self.edge_tags = tags

    # -- basic queries ------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def refinement_edges(self) -> np.ndarray:
        """Global id of each triangle's refinement edge."""
        return self.tri_edges[:, 0]

    def boundary_edge_mask(self) -> np.ndarray:
        return self.edge_tris[:, 1] < 0

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        lengths = np.linalg.norm(p[:, LOCAL_EDGES[:, 0]] - p[:, LOCAL_EDGES[:, 1]], axis=2)
        return lengths.max(axis=1)

    def h_max(self) -> float:
        return float(self.diameters().max())

    def bounding_box(self) -> tuple[tuple[float, float], tuple[float, float]]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return (float(lo[0]), float(hi[0])), (float(lo[1]), float(hi[1]))

    def edges_with_tag(self, tag) -> np.ndarray:
        return np.flatnonzero(self.edge_tags == int(Tag.parse(tag)))

    def validate(self) -> None:
        """Raise ``ValueError`` if an invariant of the mesh is broken."""
        if np.any(self.signed_areas() <= 0):
            raise ValueError("triangle with non-positive orientation")
        boundary = self.boundary_edge_mask()
        tagged = self.edge_tags != Tag.INTERIOR
        if np.any(boundary != tagged):
            bad = np.flatnonzero(boundary != tagged)[:5]
            raise ValueError(f"boundary/tag mismatch (hanging node?) on edges {self.edges[bad].tolist()}")

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.triangles, other.triangles)
                and self.boundary_tags == other.boundary_tags)

    def __repr__(self):
        return f"Mesh(n_vertices={self.n_vertices}, n_triangles={self.n_triangles})"


@dataclass(frozen=True)
class ElementGeometry:
    vertices: np.ndarray  # (3, 2)
    diameter: float
    area: float
    jacobian: np.ndarray  # (2, 2): x = vertices[0] + jacobian @ xi
    normals: np.ndarray  # (3, 2) outward unit normal of local edge k
    edge_lengths: np.ndarray  # (3,)


def element_geometry(mesh: Mesh, tri_id: int) -> ElementGeometry:
    p = mesh.vertices[mesh.triangles[tri_id]]
    jac = np.column_stack([p[1] - p[0], p[2] - p[0]])
    d = p[LOCAL_EDGES[:, 1]] - p[LOCAL_EDGES[:, 0]]
    lengths = np.linalg.norm(d, axis=1)
    normals = np.column_stack([d[:, 1], -d[:, 0]]) / lengths[:, None]
    return ElementGeometry(vertices=p, diameter=float(lengths.max()),
                           area=0.5 * float(np.linalg.det(jac)), jacobian=jac,
                           normals=normals, edge_lengths=lengths)


def build_rectangle_mesh(bounds, nx: int, ny: int, tagging_rule: Mapping | None = None) -> Mesh:
    """Structured mesh of a box split into ``2 * nx * ny`` triangles.

    ``bounds`` is ``((x0, x1), (y0, y1))``. ``tagging_rule`` maps the sides
    ``left``, ``right``, ``bottom``, ``top`` to boundary tags; missing sides
    default to inflow (weak Dirichlet).
    """
    (x0, x1), (y0, y1) = bounds
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate bounds {bounds}")
    rule = dict(DIRICHLET_TAGS)
    for side, tag in (tagging_rule or {}).items():
        if side not in rule:
            raise ValueError(f"unknown side {side!r}")
        rule[side] = Tag.parse(tag)

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            # diagonal a-c is the longest edge of both halves
            tris.append((b, c, a))
            tris.append((d, a, c))
    tags = {}
    for i in range(nx):
        tags[_edge_key(vid(i, 0), vid(i + 1, 0))] = rule["bottom"]
        tags[_edge_key(vid(i, ny), vid(i + 1, ny))] = rule["top"]
    for j in range(ny):
        tags[_edge_key(vid(0, j), vid(0, j + 1))] = rule["left"]
        tags[_edge_key(vid(nx, j), vid(nx, j + 1))] = rule["right"]
    return Mesh(vertices, np.array(tris), tags)


def bisect(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """Newest-vertex bisection of the marked triangles plus conforming closure.

    Returns a new mesh whose ``parents`` array maps every triangle to the
    triangle of ``mesh`` it descends from.
    """
    marked = np.unique(np.fromiter((int(m) for m in marked), dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_triangles:
        raise ValueError("marked triangle id out of range")

    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    edge_marked[mesh.tri_edges[marked, 0]] = True
    while True:
        touched = edge_marked[mesh.tri_edges].any(axis=1)
        need = touched & ~edge_marked[mesh.tri_edges[:, 0]]
        if not need.any():
            break
        edge_marked[mesh.tri_edges[need, 0]] = True

    verts = [v for v in mesh.vertices]
    midpoint: dict[tuple[int, int], int] = {}
    for e in np.flatnonzero(edge_marked):
        a, b = (int(x) for x in mesh.edges[e])
        midpoint[(a, b)] = len(verts)
        verts.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))

    new_tris: list[tuple[int, int, int]] = []
    parents: list[int] = []

    def split(tri, parent):
        z0, z1, z2 = tri
        m = midpoint.get(_edge_key(z1, z2))
        if m is None:
            new_tris.append(tri)
            parents.append(parent)
            return
        split((m, z0, z1), parent)
        split((m, z2, z0), parent)

    for t_id, tri in enumerate(mesh.triangles):
        split(tuple(int(x) for x in tri), t_id)

    tags = {}
    for (a, b), tag in mesh.boundary_tags.items():
        m = midpoint.get((a, b))
        if m is None:
            tags[(a, b)] = tag
        else:
            tags[_edge_key(a, m)] = tag
            tags[_edge_key(m, b)] = tag
    return Mesh(np.array(verts), np.array(new_tris), tags, parents=np.array(parents))


def uniform_refine(mesh: Mesh, rounds: int = 1) -> Mesh:
    """Bisect every triangle ``rounds`` times (two rounds halve ``h``)."""
    for _ in range(rounds):
        mesh = bisect(mesh, range(mesh.n_triangles))
    return mesh
