"""Generalized-alpha time marching with a minimum-residual spatial solve per step.

Each step solves for the new time derivative ``theta^{n+1}`` together with
a flux increment ``Q``; ``u`` is then advanced by the Taylor update
``u^{n+1} = u^n + tau theta^n + tau gamma (theta^{n+1} - theta^n)``.
The flux unknown is scaled so that ``q^{n+alpha_f} = q^n + alpha_m Q``,
which makes the step operator ``M theta + B((zeta theta, Q))`` with
``zeta = tau gamma alpha_f / alpha_m``. The operator is constant for fixed
``tau`` (and time-independent convection), so one factorization serves the
whole march.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .assembly import SaddleSystem, SolverError, Solution, scatter_vector, solve, tagged_scalar_dofs, _scatter
from .estimation import IndicatorSet, energy_estimate, exact_errors
from .femspace import Field
from .forms import (Geometry, Spaces, _require_boundary_data, local_forms, local_gram, local_load,
                    local_mass, quadrature_order)
from .mesh import Mesh, Tag
from .problems import SPATIAL, ProblemSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenAlphaParams:
    rho_inf: float
    tau: float
    alpha_m: float
    alpha_f: float
    gamma: float

    @property
    def zeta(self) -> float:
        return self.tau * self.gamma * self.alpha_f / self.alpha_m


def make_params(rho_inf: float, tau: float) -> GenAlphaParams:
    """Second-order parameters with high-frequency damping set by ``rho_inf``."""
    if not 0.0 <= rho_inf <= 1.0:
        raise ValueError("rho_inf must lie in [0, 1]")
    if not tau > 0:
        raise ValueError("time step must be positive")
    am = (3.0 - rho_inf) / (2.0 * (1.0 + rho_inf))
    af = 1.0 / (1.0 + rho_inf)
    return GenAlphaParams(rho_inf, tau, am, af, 0.5 + am - af)


@dataclass
class GenAlphaState:
    t: float
    u: Field
    q: Field
    theta: Field
    step: int = 0

    def copy(self) -> "GenAlphaState":
        return GenAlphaState(self.t, self.u.copy(), self.q.copy(), self.theta.copy(), self.step)


def _convection_is_steady(spec: ProblemSpec, geom: Geometry) -> bool:
    pts = geom.xq.reshape(-1, 2)
    b0 = spec.convection(pts, np.zeros(len(pts)))
    b1 = spec.convection(pts, np.full(len(pts), 1.0 + spec.t_final))
    return bool(np.array_equal(b0, b1))


class GenAlphaOperator:
    """Cached local arrays and the step saddle system for one mesh and time step."""

    def __init__(self, spec: ProblemSpec, spaces: Spaces, params: GenAlphaParams, *,
                 strong_dirichlet: bool = True, condense: bool = False):
        if spec.mode != SPATIAL:
            raise ValueError("generalized-alpha marching needs a spatial problem")
        self.spec, self.spaces, self.params = spec, spaces, params
        self.condense = condense
        self.strong_dirichlet = strong_dirichlet
        self.geom = Geometry(spaces.mesh, quadrature_order(spaces))
        _require_boundary_data(spec, self.geom)
        self.steady_b = _convection_is_steady(spec, self.geom)
        self.nbu = spaces.u.nb
        self.nu = spaces.u.dof_count
        self.M_loc = local_mass(self.geom, spaces)
        self.G_loc = local_gram(self.geom, spaces, scalar_weight=params.zeta, extra_mass=1.0,
                                vector_weight=params.zeta)
        self.fixed = tagged_scalar_dofs(spaces.u, Tag.INFLOW) if strong_dirichlet else np.zeros(0, dtype=np.int64)
        self._B_time = None
        self._set_operator(spec.t_start)

    # -- operator pieces -------------------------------------------------------
    def _set_operator(self, t: float):
        if self._B_time is not None and (self.steady_b or self._B_time == t):
            return
        sp = self.spaces
        self.B_loc = local_forms(self.spec, self.geom, sp, time_derivative=False, t=t)
        shape = (sp.n_test, sp.n_trial)
        self.B = _scatter(self.B_loc, sp.test_map, sp.trial_map, shape)
        self.M = _scatter(self.M_loc, sp.test_map, sp.trial_map, shape)
        A_loc = self.B_loc.copy()
        A_loc[:, :, :self.nbu] *= self.params.zeta
        A_loc += self.M_loc
        self.system = SaddleSystem(sp, self.G_loc, A_loc, np.zeros(sp.n_test), self.fixed,
                                   np.zeros(len(self.fixed)))
        self._B_time = t

    def load(self, t: float) -> np.ndarray:
        sp = self.spaces
        return scatter_vector(local_load(self.spec, self.geom, sp, t=t), sp.test_map, sp.n_test)

    def _pad_u(self, u_coeffs):
        x = np.zeros(self.spaces.n_trial)
        x[:self.nu] = u_coeffs
        return x

    def _dirichlet_rate(self, t: float) -> np.ndarray:
        """Time derivative of the boundary data at the fixed dofs."""
        pts = self.spaces.u.node_coordinates()[self.fixed]
        tt = np.full(len(pts), t)
        ex = self.spec.exact
        if ex is not None and ex.dudt is not None:
            return np.asarray(ex.dudt(pts, tt), dtype=float).reshape(-1)
        d = 1e-6 * max(1.0, abs(t))
        return (self.spec.inflow(pts, tt + d) - self.spec.inflow(pts, tt - d)) / (2 * d)

    def _boundary_theta(self, state: GenAlphaState, t_new: float) -> np.ndarray:
        """Boundary ``theta^{n+1}`` for which the Taylor update hits the data at ``t_new``."""
        p = self.params
        pts = self.spaces.u.node_coordinates()[self.fixed]
        target = self.spec.inflow(pts, np.full(len(pts), t_new))
        u_n, th_n = state.u.coeffs[self.fixed], state.theta.coeffs[self.fixed]
        return th_n + (target - u_n - p.tau * th_n) / (p.tau * p.gamma)

    # -- solves ------------------------------------------------------------------
    def initial_data(self, u0: Field) -> tuple[Field, Field, IndicatorSet, Solution]:
        """``theta^0`` and ``q^0`` from ``M theta + B((u0, q)) = l(t0)``."""
        sp = self.spaces
        t0 = self.spec.t_start
        self._set_operator(t0)
        A_loc = self.B_loc.copy()
        A_loc[:, :, :self.nbu] = self.M_loc[:, :, :self.nbu]
        F = self.load(t0) - self.B @ self._pad_u(u0.coeffs)
        fixed_vals = self._dirichlet_rate(t0) if self.strong_dirichlet else np.zeros(0)
        system = SaddleSystem(sp, self.G_loc, A_loc, F, self.fixed, fixed_vals)
        sol = _solve_tagged(system, self.condense, "initial data")
        th, q = sp.split_trial(sol.x)
        return Field(sp.u, th), Field(sp.q, q), energy_estimate(system, sol), sol

    def step(self, state: GenAlphaState) -> tuple[GenAlphaState, IndicatorSet, Solution]:
        p = self.params
        sp = self.spaces
        t_af = state.t + p.alpha_f * p.tau
        self._set_operator(t_af)
        th_n = self._pad_u(state.theta.coeffs)
        x_n = np.concatenate([state.u.coeffs, state.q.coeffs])
        F = (self.load(t_af) + (p.alpha_m - 1.0) * (self.M @ th_n)
             + p.tau * p.alpha_f * (p.gamma - 1.0) * (self.B @ th_n) - self.B @ x_n) / p.alpha_m
        fixed_vals = self._boundary_theta(state, state.t + p.tau) if self.strong_dirichlet else None
        system = self.system.with_load(F, fixed_vals)
        sol = _solve_tagged(system, self.condense, f"step {state.step + 1}")
        th_new, Q = sp.split_trial(sol.x)
        u_new = state.u.coeffs + p.tau * state.theta.coeffs + p.tau * p.gamma * (th_new - state.theta.coeffs)
        q_new = state.q.coeffs + (p.alpha_m / p.alpha_f) * Q
        new = GenAlphaState(state.t + p.tau, Field(sp.u, u_new), Field(sp.q, q_new), Field(sp.u, th_new),
                            state.step + 1)
        return new, energy_estimate(system, sol), sol


def _solve_tagged(system: SaddleSystem, condense: bool, where: str) -> Solution:
    try:
        return solve(system, condense=condense)
    except SolverError as exc:
        err = SolverError(f"{where}: {exc}", exc.block)
        err.where = where
        raise err from exc


def initial_data(spec: ProblemSpec, mesh: Mesh, spaces: Spaces, params: GenAlphaParams | None = None,
                 **kwargs) -> GenAlphaState:
    """State at ``t0`` with ``u0`` interpolated and ``theta^0``, ``q^0`` solved for."""
    params = params or make_params(0.9, 1e-2)
    op = GenAlphaOperator(spec, spaces, params, **kwargs)
    return _initial_state(op)


def _initial_state(op: GenAlphaOperator) -> GenAlphaState:
    u0 = op.spaces.u.interpolate(lambda X: op.spec.initial(X))
    th0, q0, _, _ = op.initial_data(u0)
    return GenAlphaState(op.spec.t_start, u0, q0, th0, 0)


def step(spec: ProblemSpec, mesh: Mesh, spaces: Spaces, params: GenAlphaParams,
         state: GenAlphaState, **kwargs) -> GenAlphaState:
    """One step from ``state`` (builds a fresh operator; use :func:`march` for loops)."""
    return GenAlphaOperator(spec, spaces, params, **kwargs).step(state)[0]


@dataclass
class MarchResult:
    state: GenAlphaState
    indicators: IndicatorSet
    dofs: int
    log: list = field(default_factory=list)
    errors: dict | None = None
    max_abs_u: float = 0.0


def n_steps(t_final: float, tau: float, t0: float = 0.0) -> int:
    span = t_final - t0
    if span <= 0:
        raise ValueError("final time must exceed the start time")
    n = int(round(span / tau))
    if n < 1 or abs(n * tau - span) > 1e-8 * max(1.0, span):
        raise ValueError(f"time step {tau} does not divide the interval length {span}")
    return n


def march(spec: ProblemSpec, mesh: Mesh, spaces: Spaces, params: GenAlphaParams,
          t_final: float | None = None, observers: Sequence[Callable] = (), *,
          strong_dirichlet: bool = True, condense: bool = False, log_errors: bool = True,
          final_errors: bool = True) -> MarchResult:
    """Initial-data solve followed by steps up to ``t_final``.

    Observers are called as ``obs(state, indicators)`` after every step
    (and once for the initial state with the initial-data indicators).
    """
    t_final = spec.t_final if t_final is None else t_final
    nsteps = n_steps(t_final, params.tau, spec.t_start)
    op = GenAlphaOperator(spec, spaces, params, strong_dirichlet=strong_dirichlet, condense=condense)
    u0 = spaces.u.interpolate(lambda X: spec.initial(X))
    th0, q0, ind, _ = op.initial_data(u0)
    state = GenAlphaState(spec.t_start, u0, q0, th0, 0)
    for obs in observers:
        obs(state, ind)
    rows = []
    umax = float(np.abs(u0.coeffs).max(initial=0.0))
    has_exact = spec.exact is not None
    for n in range(nsteps):
        state, ind, _ = op.step(state)
        if n == nsteps - 1:
            state.t = t_final  # avoid drift from repeated addition
        umax = max(umax, float(np.abs(state.u.coeffs).max()))
        if not np.isfinite(umax):
            raise SolverError(f"step {state.step}: non-finite solution", "trial (u, q)")
        row = {"step": state.step, "t": state.t, "L2_u": float("nan"), "energy_estimate": ind.total}
        if has_exact and log_errors:
            row["L2_u"] = exact_errors(state.u, state.q, spec, t=state.t)["L2_u"]
        rows.append(row)
        for obs in observers:
            obs(state, ind)
    errs = exact_errors(state.u, state.q, spec, t=state.t) if has_exact and final_errors else None
    dofs = op.system.dof_count
    return MarchResult(state, ind, dofs, rows, errs, umax)


def genalpha_solver(spec: ProblemSpec, params: GenAlphaParams, p: int = 1, dp: int = 1,
                    p_q: int | None = None, condense: bool = True, log_errors: bool = False,
                    strong_dirichlet: bool = True) -> Callable:
    """Adaptive-loop callback: march to the final time on a given mesh.

    The returned indicators are the final-time step indicators.
    """
    from .estimation import SolveResult
    from .forms import spaces_for

    def run(mesh: Mesh):
        spaces = spaces_for(spec, mesh, p=p, dp=dp, p_q=p_q)
        res = march(spec, mesh, spaces, params, condense=condense, log_errors=log_errors,
                    strong_dirichlet=strong_dirichlet)
        return SolveResult(res.state.u, res.state.q, res.indicators, res.dofs, res.errors, payload=res)
    return run


def element_intersects_band(mesh: Mesh, ids=None, r_lo: float = 0.35, r_hi: float = 0.65) -> np.ndarray:
    """Whether triangles meet the annulus ``r_lo <= |x| <= r_hi`` (centered at the origin)."""
    ids = np.arange(mesh.n_triangles) if ids is None else np.asarray(ids, dtype=np.int64)
    p = mesh.vertices[mesh.triangles[ids]]
    r_max = np.linalg.norm(p, axis=2).max(axis=1)
    r_min = np.array([_dist_origin_to_triangle(tri) for tri in p]) if len(ids) else np.zeros(0)
    return (r_max >= r_lo) & (r_min <= r_hi)


def _dist_origin_to_triangle(P: np.ndarray) -> float:
    a, b, c = P

    def cross(u, v):
        return u[0] * v[1] - u[1] * v[0]

    # inside test via barycentric signs
    d1 = cross(b - a, -a)
    d2 = cross(c - b, -b)
    d3 = cross(a - c, -c)
    if (d1 >= 0 and d2 >= 0 and d3 >= 0) or (d1 <= 0 and d2 <= 0 and d3 <= 0):
        return 0.0
    best = math.inf
    for s, e in ((a, b), (b, c), (c, a)):
        d = e - s
        lam = np.clip(-(s @ d) / (d @ d), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(s + lam * d)))
    return best
