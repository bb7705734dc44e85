"""Element-level forms of the AVS-FE convection-diffusion formulation.

Everything is evaluated for a batch of elements at once. Local test
ordering is ``[v (nbv), w_0 (nbv), ..., w_{sd-1} (nbv)]`` and local trial
ordering is ``[u (nbu), q_0 (nbq), ..., q_{sd-1} (nbq)]``, where ``sd`` is
the number of spatial directions (1 on an (x, t) mesh, 2 on an (x, y) mesh).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .femspace import (BROKEN, CONTINUOUS, FESpace, edge_quadrature, edge_reference_points,
                       triangle_quadrature)
from .mesh import LOCAL_EDGES, Mesh, Tag
from .problems import SPACE_TIME, ProblemSpec

TRIAL_DEGREES = (1, 2)


@dataclass
class Spaces:
    """Trial pair (u, q) and broken test pair (v, w) on one mesh."""

    u: FESpace
    q: FESpace
    v: FESpace
    w: FESpace

    @property
    def mesh(self) -> Mesh:
        return self.u.mesh

    @property
    def sd(self) -> int:
        return self.q.ncomp

    @property
    def n_trial(self) -> int:
        return self.u.dof_count + self.q.dof_count

    @property
    def n_test(self) -> int:
        return self.v.dof_count + self.w.dof_count

    @cached_property
    def trial_map(self) -> np.ndarray:
        return np.hstack([self.u.dof_map, self.q.dof_map + self.u.dof_count])

    @cached_property
    def test_map(self) -> np.ndarray:
        return np.hstack([self.v.dof_map, self.w.dof_map + self.v.dof_count])

    def split_trial(self, x):
        return x[: self.u.dof_count], x[self.u.dof_count:]

    def split_test(self, e):
        return e[: self.v.dof_count], e[self.v.dof_count:]


def make_spaces(mesh: Mesh, spatial_dim: int, p: int = 1, dp: int = 0, p_q: int | None = None) -> Spaces:
    """Continuous P^p trial pair and broken P^(p+dp) test pair."""
    p_q = p if p_q is None else p_q
    if p not in TRIAL_DEGREES or p_q not in TRIAL_DEGREES:
        raise ValueError(f"trial degrees must be in {TRIAL_DEGREES}")
    if dp not in (0, 1):
        raise ValueError("test enrichment dp must be 0 or 1")
    pt = max(p, p_q) + dp
    return Spaces(u=FESpace(mesh, CONTINUOUS, p, 1), q=FESpace(mesh, CONTINUOUS, p_q, spatial_dim),
                  v=FESpace(mesh, BROKEN, pt, 1), w=FESpace(mesh, BROKEN, pt, spatial_dim))


def spaces_for(spec: ProblemSpec, mesh: Mesh, p: int = 1, dp: int = 0, p_q: int | None = None) -> Spaces:
    return make_spaces(mesh, spec.spatial_dim, p, dp, p_q)


class Geometry:
    """Batched affine geometry and quadrature data for a set of elements."""

    def __init__(self, mesh: Mesh, order: int, elements=None):
        self.mesh = mesh
        self.elements = np.arange(mesh.n_triangles) if elements is None else np.atleast_1d(elements)
        p = mesh.vertices[mesh.triangles[self.elements]]
        self.J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        self.detJ = self.J[:, 0, 0] * self.J[:, 1, 1] - self.J[:, 0, 1] * self.J[:, 1, 0]
        self.invJT = np.linalg.inv(self.J).transpose(0, 2, 1)
        self.area = 0.5 * self.detJ
        d = p[:, LOCAL_EDGES[:, 1]] - p[:, LOCAL_EDGES[:, 0]]
        self.edge_len = np.linalg.norm(d, axis=2)
        self.h = self.edge_len.max(axis=1)
        self.normals = np.stack([d[..., 1], -d[..., 0]], axis=-1) / self.edge_len[..., None]
        self.edge_tags = mesh.edge_tags[mesh.tri_edges[self.elements]]

        self.quad = triangle_quadrature(order)
        self.xq = p[:, :1, :] + np.einsum("eij,qj->eqi", self.J, self.quad.points)
        self.wq = self.quad.weights[None, :] * self.detJ[:, None]

        self.equad = edge_quadrature(order)
        self.edge_ref = np.stack([edge_reference_points(k, self.equad.points) for k in range(3)])
        self.xe = p[:, None, :1, :] + np.einsum("eij,ksj->eksi", self.J, self.edge_ref)
        self.we = self.equad.weights[None, None, :] * self.edge_len[..., None]
        self._cache = {}

    @property
    def n(self) -> int:
        return len(self.elements)

    def basis(self, degree: int):
        """Values at volume points, physical gradients, and values on the edges."""
        if degree not in self._cache:
            from .femspace import lagrange_basis

            phi, dphi = lagrange_basis(degree, self.quad.points)
            grad = np.einsum("eij,qbj->eqbi", self.invJT, dphi)
            phie = np.stack([lagrange_basis(degree, self.edge_ref[k])[0] for k in range(3)])
            self._cache[degree] = (phi, grad, phie)
        return self._cache[degree]


def _coords(spec: ProblemSpec, X: np.ndarray, t: float | None):
    """Split physical points into spatial coordinates and times."""
    flat = X.reshape(-1, 2)
    if spec.mode == SPACE_TIME:
        return flat[:, :1], flat[:, 1]
    if t is None:
        raise ValueError("a time value is needed for spatial-mode forms")
    return flat, np.full(len(flat), float(t))


def quadrature_order(spaces: Spaces) -> int:
    return 2 * spaces.v.degree + 2


@dataclass
class ElementMatrices:
    """Local arrays for a batch of elements.

    ``B``: (n, n_test_loc, n_trial_loc) form matrix, ``F``: (n, n_test_loc)
    load, ``G``: (n, n_test_loc, n_test_loc) test Gram matrix, and
    ``M``: (n, n_test_loc, n_trial_loc) L2 pairing of ``u`` with ``v``.
    """

    B: np.ndarray
    F: np.ndarray | None
    G: np.ndarray
    M: np.ndarray | None = None

    def block(self, name: str, spaces: Spaces) -> np.ndarray:
        nv, nu = spaces.v.nb, spaces.u.nb
        rows = {"v": slice(0, nv), "w": slice(nv, None)}
        cols = {"u": slice(0, nu), "q": slice(nu, None)}
        return self.B[..., rows[name[0]], cols[name[1]]]


def local_forms(spec: ProblemSpec, geom: Geometry, spaces: Spaces, *, time_derivative: bool,
                t: float | None = None) -> np.ndarray:
    """Local matrices of ``B((u, q); (v, w))``.

    With ``time_derivative=False`` this is the spatial operator used by the
    generalized-alpha scheme. The edge families follow the weak form: all
    terms on interior edges, the ``(b.n) u v`` and ``eps (w.n) u`` terms on
    boundary edges off the inflow part, and ``-(q.n) v`` on boundary edges
    off the outflow part. Only the spatial part of the normal enters.
    """
    sd = spaces.sd
    eps = spec.eps
    nbv, nbu, nbq = spaces.v.nb, spaces.u.nb, spaces.q.nb
    phv, gv, phve = geom.basis(spaces.v.degree)
    phu, gu, phue = geom.basis(spaces.u.degree)
    phq, _, phqe = geom.basis(spaces.q.degree)
    E = geom.n
    ntest, ntrial = nbv * (1 + sd), nbu + sd * nbq
    out = np.zeros((E, ntest, ntrial))

    xs, tt = _coords(spec, geom.xq, t)
    b = spec.convection(xs, tt).reshape(E, -1, sd)
    divb = spec.convection_divergence(xs, tt).reshape(E, -1)
    wq = geom.wq
    gvs = gv[..., :sd]

    # v-u block
    bgv = np.einsum("eqd,eqid->eqi", b, gvs)
    Bvu = -np.einsum("eq,eqi,qj->eij", wq, bgv, phu)
    Bvu -= np.einsum("eq,eq,qi,qj->eij", wq, divb, phv, phu)
    if time_derivative:
        if spec.mode != SPACE_TIME:
            raise ValueError("time-derivative term requires a space-time problem")
        Bvu += np.einsum("eq,eqj,qi->eij", wq, gu[..., 1], phv)
    out[:, :nbv, :nbu] = Bvu
    for c in range(sd):
        qs = slice(nbu + c * nbq, nbu + (c + 1) * nbq)
        ws = slice(nbv + c * nbv, nbv + (c + 1) * nbv)
        # v-q: q . grad v
        out[:, :nbv, qs] = np.einsum("eq,eqi,qj->eij", wq, gvs[..., c], phq)
        # w-u: -eps u div w
        out[:, ws, :nbu] = -eps * np.einsum("eq,eqi,qj->eij", wq, gv[..., c], phu)
        # w-q: -q . w
        out[:, ws, qs] = -np.einsum("q,e,qi,qj->eij", geom.quad.weights, geom.detJ, phv, phq)

    # edge terms
    xe, te = _coords(spec, geom.xe, t)
    be = spec.convection(xe, te).reshape(E, 3, -1, sd)
    ns = geom.normals[..., :sd]
    bn = np.einsum("eksd,ekd->eks", be, ns)
    tags = geom.edge_tags
    m_bu = (tags != Tag.INFLOW).astype(float)
    m_q = (tags != Tag.OUTFLOW).astype(float)
    we = geom.we
    out[:, :nbv, :nbu] += np.einsum("ek,eks,eks,ksi,ksj->eij", m_bu, we, bn, phve, phue)
    for c in range(sd):
        qs = slice(nbu + c * nbq, nbu + (c + 1) * nbq)
        ws = slice(nbv + c * nbv, nbv + (c + 1) * nbv)
        out[:, ws, :nbu] += eps * np.einsum("ek,eks,ek,ksi,ksj->eij", m_bu, we, ns[..., c], phve, phue)
        out[:, :nbv, qs] -= np.einsum("ek,eks,ek,ksi,ksj->eij", m_q, we, ns[..., c], phve, phqe)
    return out


def local_load(spec: ProblemSpec, geom: Geometry, spaces: Spaces, t: float | None = None) -> np.ndarray:
    """Local vectors of ``F((v, w))``: source, Neumann outflow and inflow data."""
    sd = spaces.sd
    nbv = spaces.v.nb
    phv, _, phve = geom.basis(spaces.v.degree)
    E = geom.n
    out = np.zeros((E, nbv * (1 + sd)))
    xs, tt = _coords(spec, geom.xq, t)
    f = spec.source(xs, tt).reshape(E, -1)
    out[:, :nbv] = np.einsum("eq,eq,qi->ei", geom.wq, f, phv)

    tags = geom.edge_tags
    inflow = tags == Tag.INFLOW
    outflow = tags == Tag.OUTFLOW
    ns = geom.normals[..., :sd]
    if outflow.any():
        e_idx, k_idx = np.nonzero(outflow)
        xe, te = _coords(spec, geom.xe[e_idx, k_idx], t)
        g = spec.neumann(xe, te).reshape(len(e_idx), -1)
        contrib = np.einsum("ns,ns,nsi->ni", geom.we[e_idx, k_idx], g, phve[k_idx])
        np.add.at(out[:, :nbv], e_idx, contrib)
    if inflow.any():
        e_idx, k_idx = np.nonzero(inflow)
        xe, te = _coords(spec, geom.xe[e_idx, k_idx], t)
        uin = spec.inflow(xe, te).reshape(len(e_idx), -1)
        be = spec.convection(xe, te).reshape(len(e_idx), -1, sd)
        n_sel = ns[e_idx, k_idx]
        bn = np.einsum("nsd,nd->ns", be, n_sel)
        w_sel = geom.we[e_idx, k_idx]
        np.add.at(out[:, :nbv], e_idx, -np.einsum("ns,ns,ns,nsi->ni", w_sel, bn, uin, phve[k_idx]))
        for c in range(sd):
            contrib = -spec.eps * np.einsum("ns,ns,n,nsi->ni", w_sel, uin, n_sel[:, c], phve[k_idx])
            np.add.at(out[:, nbv + c * nbv: nbv + (c + 1) * nbv], e_idx, contrib)
    return out


def local_gram(geom: Geometry, spaces: Spaces, scalar_weight: float = 1.0,
               extra_mass: float = 0.0, vector_weight: float = 1.0) -> np.ndarray:
    """Local Gram matrices of the broken test inner product.

    Scalar block: ``scalar_weight * (h^2 grad v . grad r + v r) + extra_mass * v r``;
    vector block: ``vector_weight * (h^2 div w div z + w . z)``. Gradients and divergences are
    spatial. The defaults give the standard V inner product.
    """
    sd = spaces.sd
    nbv = spaces.v.nb
    phv, gv, _ = geom.basis(spaces.v.degree)
    E = geom.n
    h2 = geom.h**2
    mass = np.einsum("q,e,qi,qj->eij", geom.quad.weights, geom.detJ, phv, phv)
    stiff = np.einsum("eq,eqid,eqjd->eij", geom.wq, gv[..., :sd], gv[..., :sd])
    out = np.zeros((E, nbv * (1 + sd), nbv * (1 + sd)))
    out[:, :nbv, :nbv] = scalar_weight * (h2[:, None, None] * stiff + mass) + extra_mass * mass
    for c in range(sd):
        for d in range(sd):
            blk = h2[:, None, None] * np.einsum("eq,eqi,eqj->eij", geom.wq, gv[..., c], gv[..., d])
            if c == d:
                blk = blk + mass
            out[:, nbv * (1 + c): nbv * (2 + c), nbv * (1 + d): nbv * (2 + d)] = vector_weight * blk
    return 0.5 * (out + out.transpose(0, 2, 1))


def local_mass(geom: Geometry, spaces: Spaces) -> np.ndarray:
    """``(u, v)`` pairing embedded in the full local (test x trial) shape."""
    nbv, nbu = spaces.v.nb, spaces.u.nb
    phv, _, _ = geom.basis(spaces.v.degree)
    phu, _, _ = geom.basis(spaces.u.degree)
    out = np.zeros((geom.n, nbv * (1 + spaces.sd), nbu + spaces.sd * spaces.q.nb))
    out[:, :nbv, :nbu] = np.einsum("q,e,qi,qj->eij", geom.quad.weights, geom.detJ, phv, phu)
    return out


def element_B_F(spec: ProblemSpec, mesh: Mesh, tri_id: int, spaces: Spaces) -> ElementMatrices:
    """Space-time local B, F and Gram for one element."""
    geom = Geometry(mesh, quadrature_order(spaces), elements=[tri_id])
    _require_boundary_data(spec, geom)
    B = local_forms(spec, geom, spaces, time_derivative=True)
    return ElementMatrices(B=B[0], F=local_load(spec, geom, spaces)[0], G=local_gram(geom, spaces)[0])


def v_inner_product_local(mesh: Mesh, tri_id: int, spaces: Spaces) -> np.ndarray:
    geom = Geometry(mesh, quadrature_order(spaces), elements=[tri_id])
    return local_gram(geom, spaces)[0]


def _require_boundary_data(spec: ProblemSpec, geom: Geometry):
    tags = geom.edge_tags
    if np.any(tags == Tag.INFLOW) and spec.u_in is None:
        raise ValueError(f"inflow edges present but problem {spec.name!r} has no inflow data")
    if np.any(tags == Tag.OUTFLOW) and spec.g is None:
        raise ValueError(f"outflow edges present but problem {spec.name!r} has no Neumann data")
