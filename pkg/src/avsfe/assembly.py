"""Global saddle-point assembly, sparse direct solves and the normal-equation oracle.

The discrete problem couples the trial unknowns ``x = (u, q)`` with the
error representation ``e = (e_v, e_w)`` in the broken test space::

    [ G   A ] [e]   [F]
    [ A^T 0 ] [x] = [0]

``G`` is the test Gram matrix (block diagonal per element), ``A`` the
trial-to-test operator matrix and ``F`` the load. The first row says
``e`` is the Riesz representer of the residual ``F - A x``; the second
row makes that residual orthogonal to the trial space. Strongly imposed
trial values are eliminated (columns moved to the right-hand side).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .femspace import Field, edge_local_nodes
from .forms import (Geometry, Spaces, local_forms, local_gram, local_load, quadrature_order,
                    _require_boundary_data)
from .mesh import Mesh, Tag
from .problems import SPACE_TIME, ProblemSpec

log = logging.getLogger(__name__)

NORMAL_EQUATION_MAX_ELEMENTS = 200
#: callables ``hook(system, solution)`` run after every successful :func:`solve`
SOLVE_HOOKS: list = []


class SolverError(RuntimeError):
    """Factorization or solve failure; ``block`` names the offending dof block."""

    def __init__(self, message: str, block: str):
        super().__init__(f"{message} [block: {block}]")
        self.block = block


@dataclass
class SaddleSystem:
    spaces: Spaces
    G_loc: np.ndarray
    A_loc: np.ndarray
    F: np.ndarray
    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fixed_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    _cache: dict = field(default_factory=dict, repr=False)

    # -- global blocks -------------------------------------------------------
    @property
    def n_test(self) -> int:
        return self.spaces.n_test

    @property
    def n_trial(self) -> int:
        return self.spaces.n_trial

    @property
    def free(self) -> np.ndarray:
        if "free" not in self._cache:
            mask = np.ones(self.n_trial, dtype=bool)
            mask[self.fixed] = False
            self._cache["free"] = np.flatnonzero(mask)
        return self._cache["free"]

    @property
    def G(self) -> sps.csr_matrix:
        if "G" not in self._cache:
            tm = self.spaces.test_map
            self._cache["G"] = _scatter(self.G_loc, tm, tm, (self.n_test, self.n_test))
        return self._cache["G"]

    @property
    def A(self) -> sps.csr_matrix:
        if "A" not in self._cache:
            self._cache["A"] = _scatter(self.A_loc, self.spaces.test_map, self.spaces.trial_map,
                                        (self.n_test, self.n_trial))
        return self._cache["A"]

    @property
    def matrix(self) -> sps.csr_matrix:
        """Symmetric saddle matrix on (error representation, free trial) dofs."""
        if "K" not in self._cache:
            Af = self.A[:, self.free]
            self._cache["K"] = sps.bmat([[self.G, Af], [Af.T, None]], format="csr")
        return self._cache["K"]

    def reduced_load(self) -> np.ndarray:
        F = self.F.copy()
        if len(self.fixed):
            F -= self.A[:, self.fixed] @ self.fixed_values
        return F

    @property
    def rhs(self) -> np.ndarray:
        return np.concatenate([self.reduced_load(), np.zeros(len(self.free))])

    @property
    def dof_count(self) -> int:
        """Trial plus error-representation unknowns."""
        return self.n_trial + self.n_test

    def with_load(self, F: np.ndarray, fixed_values: np.ndarray | None = None) -> "SaddleSystem":
        """Same operator (and cached factorization) with a new right-hand side."""
        fv = self.fixed_values if fixed_values is None else np.asarray(fixed_values, dtype=float)
        return replace(self, F=np.asarray(F, dtype=float), fixed_values=fv, _cache=self._cache)


def _scatter(local: np.ndarray, rows: np.ndarray, cols: np.ndarray, shape) -> sps.csr_matrix:
    E, nr, nc = local.shape
    R = np.broadcast_to(rows[:, :, None], (E, nr, nc)).ravel()
    C = np.broadcast_to(cols[:, None, :], (E, nr, nc)).ravel()
    M = sps.coo_matrix((local.ravel(), (R, C)), shape=shape).tocsr()
    M.sum_duplicates()
    M.sort_indices()
    return M


def scatter_vector(local: np.ndarray, dof_map: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(dof_map.ravel(), weights=local.ravel(), minlength=n)


# -- constraints -------------------------------------------------------------
def tagged_scalar_dofs(space, tag) -> np.ndarray:
    """Global scalar dofs of ``space`` on edges with the given boundary tag."""
    mesh = space.mesh
    edges = mesh.edges_with_tag(tag)
    if len(edges) == 0:
        return np.zeros(0, dtype=np.int64)
    tri = mesh.edge_tris[edges, 0]
    local_k = np.argmax(mesh.tri_edges[tri] == edges[:, None], axis=1)
    dofs = [space.scalar_dofs[t, edge_local_nodes(space.degree, k)] for t, k in zip(tri, local_k)]
    return np.unique(np.concatenate(dofs))


def _constraints(spec: ProblemSpec, spaces: Spaces, strong_dirichlet: bool, u0=None):
    """Strong trial constraints: u0 on initial-time edges, optionally u_in on inflow."""
    u = spaces.u
    coords = u.node_coordinates()
    values: dict[int, float] = {}
    if strong_dirichlet:
        dofs = tagged_scalar_dofs(u, Tag.INFLOW)
        if len(dofs):
            pts = coords[dofs]
            xs, tt = (pts[:, :1], pts[:, 1]) if spec.mode == SPACE_TIME else (pts, np.full(len(pts), spec.t_start))
            values.update(zip(dofs.tolist(), spec.inflow(xs, tt).tolist()))
    if spec.mode == SPACE_TIME:
        dofs = tagged_scalar_dofs(u, Tag.INITIAL_TIME)
        init = u0 if u0 is not None else spec.initial
        vals = np.asarray(init(coords[dofs][:, :1]), dtype=float).reshape(len(dofs))
        values.update(zip(dofs.tolist(), vals.tolist()))
    fixed = np.array(sorted(values), dtype=np.int64)
    return fixed, np.array([values[i] for i in fixed.tolist()])


# -- assembly -----------------------------------------------------------------
def assemble_spacetime(spec: ProblemSpec, mesh: Mesh, spaces: Spaces, *, strong_dirichlet: bool = False,
                       u0=None) -> SaddleSystem:
    """Saddle system of the space-time formulation on an (x, t) mesh.

    ``u0`` overrides the problem's initial data (used by slab sweeps).
    """
    if spec.mode != SPACE_TIME:
        raise ValueError("assemble_spacetime needs a space-time problem")
    if len(mesh.edges_with_tag(Tag.INITIAL_TIME)) == 0:
        raise ValueError("space-time mesh has no initial_time edges")
    geom = Geometry(mesh, quadrature_order(spaces))
    _require_boundary_data(spec, geom)
    A_loc = local_forms(spec, geom, spaces, time_derivative=True)
    F = scatter_vector(local_load(spec, geom, spaces), spaces.test_map, spaces.n_test)
    G_loc = local_gram(geom, spaces)
    fixed, values = _constraints(spec, spaces, strong_dirichlet, u0=u0)
    return SaddleSystem(spaces, G_loc, A_loc, F, fixed, values)


# -- solution -----------------------------------------------------------------
@dataclass
class Solution:
    spaces: Spaces
    x: np.ndarray  # full trial vector (u, q)
    e: np.ndarray  # error representation (e_v, e_w)
    orthogonality: float = 0.0
    residual: float = 0.0

    @property
    def u(self) -> Field:
        return Field(self.spaces.u, self.spaces.split_trial(self.x)[0])

    @property
    def q(self) -> Field:
        return Field(self.spaces.q, self.spaces.split_trial(self.x)[1])

    @property
    def e_v(self) -> Field:
        return Field(self.spaces.v, self.spaces.split_test(self.e)[0])

    @property
    def e_w(self) -> Field:
        return Field(self.spaces.w, self.spaces.split_test(self.e)[1])


def _factor(M: sps.spmatrix, block: str):
    try:
        lu = spla.splu(M.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"sparse factorization failed: {exc}", block) from exc
    return lu


def _gram_block_check(system: SaddleSystem):
    try:
        np.linalg.cholesky(system.G_loc)
    except np.linalg.LinAlgError as exc:
        raise SolverError("test Gram matrix is not positive definite", "error representation") from exc


def solve(system: SaddleSystem, condense: bool = False) -> Solution:
    """Sparse direct solve of the saddle system.

    ``condense=True`` eliminates the error representation element by
    element (``G`` is block diagonal) and factorizes the trial Schur
    complement instead of the full saddle matrix.
    """
    n_test = system.n_test
    free = system.free
    x = np.zeros(system.n_trial)
    x[system.fixed] = system.fixed_values
    F = system.reduced_load()
    key = "lu_condensed" if condense else "lu_full"
    if condense:
        if key not in system._cache:
            _gram_block_check(system)
            system._cache[key] = _condensed_factor(system)
        lu, Ginv_apply = system._cache[key]
        z = Ginv_apply(F)
        rhs = (system.A[:, free].T @ z)
        xf = lu.solve(rhs)
        if not np.all(np.isfinite(xf)):
            raise SolverError("non-finite solution", "trial (u, q)")
        x[free] = xf
        e = Ginv_apply(system.F - system.A @ x)
        Ax_res = np.abs(system.A[:, free].T @ e).max(initial=0.0)
        res = float(np.abs(rhs - system._cache["N"] @ xf).max(initial=0.0))
        scale = 1.0 + np.abs(rhs).max(initial=0.0)
    else:
        if key not in system._cache:
            _gram_block_check(system)
            system._cache[key] = _factor(system.matrix, "trial (u, q)")
        lu = system._cache[key]
        K = system.matrix
        b = np.concatenate([F, np.zeros(len(free))])
        sol = lu.solve(b)
        r = b - K @ sol
        scale = 1.0 + np.abs(b).max(initial=0.0)
        if np.abs(r).max(initial=0.0) > 1e-10 * scale:
            sol += lu.solve(r)  # one step of iterative refinement
            r = b - K @ sol
        if not np.all(np.isfinite(sol)):
            raise SolverError("non-finite solution", "trial (u, q)")
        res = float(np.abs(r).max(initial=0.0))
        e = sol[:n_test]
        x[free] = sol[n_test:]
        Ax_res = np.abs(r[n_test:]).max(initial=0.0)
    if res > 1e-8 * scale:
        bad = "error representation" if not condense and np.abs(r[:n_test]).max() > 1e-8 * scale else "trial (u, q)"
        raise SolverError(f"residual {res:.3e} exceeds tolerance (rank deficient system?)", bad)
    sol = Solution(system.spaces, x, e, orthogonality=float(Ax_res), residual=res)
    for hook in SOLVE_HOOKS:
        hook(system, sol)
    return sol


def _condensed_factor(system: SaddleSystem):
    spaces = system.spaces
    tm = spaces.test_map
    Ginv_loc = np.linalg.inv(system.G_loc)
    Ginv_loc = 0.5 * (Ginv_loc + Ginv_loc.transpose(0, 2, 1))
    N_loc = np.einsum("eij,eik->ejk", system.A_loc, np.einsum("eij,ejk->eik", Ginv_loc, system.A_loc))
    N = _scatter(N_loc, spaces.trial_map, spaces.trial_map, (system.n_trial, system.n_trial))
    free = system.free
    Nff = N[free][:, free]
    system._cache["N"] = Nff

    def Ginv_apply(vec):
        loc = vec[tm]
        return scatter_vector(np.einsum("eij,ej->ei", Ginv_loc, loc), tm, spaces.n_test)

    return _factor(Nff, "trial (u, q)"), Ginv_apply


def normal_equations_solution(system: SaddleSystem) -> np.ndarray:
    """Trial vector from ``A^T G^-1 A x = A^T G^-1 F`` by dense explicit elimination."""
    n_el = system.spaces.mesh.n_triangles
    if n_el > NORMAL_EQUATION_MAX_ELEMENTS:
        raise ValueError(f"normal-equation oracle limited to {NORMAL_EQUATION_MAX_ELEMENTS} elements, got {n_el}")
    G = system.G.toarray()
    A = system.A.toarray()
    free, fixed = system.free, system.fixed
    F = system.F - A[:, fixed] @ system.fixed_values
    Af = A[:, free]
    GinvA = np.linalg.solve(G, Af)
    GinvF = np.linalg.solve(G, F)
    xf = np.linalg.solve(Af.T @ GinvA, Af.T @ GinvF)
    x = np.zeros(system.n_trial)
    x[fixed] = system.fixed_values
    x[free] = xf
    return x


def solve_normal_equations(spec: ProblemSpec, mesh: Mesh, spaces: Spaces, **kwargs) -> Solution:
    """Optimal-test-function (normal equation) route for a space-time problem."""
    system = assemble_spacetime(spec, mesh, spaces, **kwargs)
    x = normal_equations_solution(system)
    return Solution(spaces, x, np.zeros(spaces.n_test))
