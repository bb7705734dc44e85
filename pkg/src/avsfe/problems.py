"""Convection-diffusion problem definitions and the verification catalogue.

All data callables take ``(x, t)`` with ``x`` of shape ``(n, sd)`` (spatial
coordinates only, ``sd`` = 1 for space-time runs on (x, t) meshes and 2 for
spatial meshes) and ``t`` of shape ``(n,)``. ``b`` returns ``(n, sd)``;
scalar data return ``(n,)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .mesh import DIRICHLET_TAGS, SPACETIME_TAGS

SPACE_TIME = "space-time"
SPATIAL = "spatial"


@dataclass(frozen=True)
class ExactSolution:
    u: Callable
    grad: Callable  # (n, sd)
    lap: Callable
    dudt: Callable


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    mode: str
    eps: float
    b: Callable
    f: Optional[Callable] = None
    u_in: Optional[Callable] = None
    u0: Optional[Callable] = None  # u0(x) with x of shape (n, sd)
    g: Optional[Callable] = None
    div_b: Optional[Callable] = None
    exact: Optional[ExactSolution] = None
    bounds: tuple = ((0.0, 1.0), (0.0, 1.0))
    t_final: float = 1.0
    tagging: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in (SPACE_TIME, SPATIAL):
            raise ValueError(f"mode must be {SPACE_TIME!r} or {SPATIAL!r}")
        if self.eps < 0:
            raise ValueError("diffusion coefficient must be non-negative")

    @property
    def spatial_dim(self) -> int:
        return 1 if self.mode == SPACE_TIME else 2

    @property
    def t_start(self) -> float:
        return self.bounds[1][0] if self.mode == SPACE_TIME else 0.0

    def convection(self, x, t):
        return np.asarray(self.b(x, t), dtype=float).reshape(len(x), self.spatial_dim)

    def convection_divergence(self, x, t):
        if self.div_b is None:
            return np.zeros(len(x))
        return _as_column(self.div_b(x, t), len(x))

    def source(self, x, t):
        if self.f is not None:
            return _as_column(self.f(x, t), len(x))
        if self.exact is None:
            return np.zeros(len(x))
        return manufactured_source(self, x, t)

    def inflow(self, x, t):
        if self.u_in is None:
            raise ValueError(f"problem {self.name!r} has no inflow/Dirichlet data")
        return _as_column(self.u_in(x, t), len(x))

    def neumann(self, x, t):
        if self.g is None:
            raise ValueError(f"problem {self.name!r} has no Neumann data")
        return _as_column(self.g(x, t), len(x))

    def initial(self, x):
        if self.u0 is None:
            raise ValueError(f"problem {self.name!r} has no initial data")
        return _as_column(self.u0(x), len(x))

    def with_initial(self, u0: Callable) -> "ProblemSpec":
        return replace(self, u0=u0)

    def with_time_window(self, t0: float, t1: float) -> "ProblemSpec":
        """Same problem restricted to ``(t0, t1)`` (space-time bounds or final time)."""
        if self.mode == SPACE_TIME:
            return replace(self, bounds=(self.bounds[0], (t0, t1)), t_final=t1)
        return replace(self, t_final=t1)


def _as_column(v, n):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return np.full(n, float(v))
    return v.reshape(n)


def manufactured_source(spec: ProblemSpec, x, t) -> np.ndarray:
    """``du/dt - eps * lap(u) + b . grad(u)`` evaluated from the exact bundle."""
    ex = spec.exact
    if ex is None or any(getattr(ex, k) is None for k in ("u", "grad", "lap", "dudt")):
        raise ValueError(f"problem {spec.name!r} lacks a complete exact-solution bundle")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = len(x)
    t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
    grad = np.asarray(ex.grad(x, t), dtype=float).reshape(n, spec.spatial_dim)
    conv = np.einsum("nd,nd->n", spec.convection(x, t), grad)
    return _as_column(ex.dudt(x, t), n) - spec.eps * _as_column(ex.lap(x, t), n) + conv


def pde_residual(spec: ProblemSpec, x, t) -> np.ndarray:
    """Pointwise residual of the exact solution against the source term in use."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(x),))
    return manufactured_source(spec, x, t) - spec.source(x, t)


def from_exact(name: str, mode: str, eps: float, b: Callable, exact: ExactSolution,
               div_b: Callable | None = None, **kwargs) -> ProblemSpec:
    """Problem whose source, Dirichlet and initial data come from ``exact``."""
    spec = ProblemSpec(name=name, mode=mode, eps=eps, b=b, exact=exact, div_b=div_b,
                       u_in=exact.u, **kwargs)
    t0 = spec.t_start
    u0 = lambda x: exact.u(x, np.full(len(x), t0))  # noqa: E731
    spec = replace(spec, u0=u0)
    return replace(spec, f=lambda x, t: manufactured_source(spec, x, t))


# -- Eriksson-Johnson --------------------------------------------------------
@dataclass(frozen=True)
class ErikssonJohnsonParams:
    eps: float
    l: float
    lam1: float
    lam2: float
    r: float
    s: float

    @classmethod
    def from_eps(cls, eps: float, l: float = 2.0) -> "ErikssonJohnsonParams":
        if eps <= 0:
            raise ValueError("Eriksson-Johnson problem needs eps > 0")
        disc = 1.0 - 4.0 * eps * l
        if disc < 0:
            raise ValueError("eps * l must not exceed 1/4")
        root = np.sqrt(disc)
        lam1 = (-1.0 + root) / (-2.0 * eps)
        lam2 = (-1.0 - root) / (-2.0 * eps)
        w = np.sqrt(1.0 + 4.0 * np.pi**2 * eps**2)
        return cls(eps, l, lam1, lam2, (1.0 + w) / (2.0 * eps), (1.0 - w) / (2.0 * eps))


def _ej_parts(P: ErikssonJohnsonParams, xs, t):
    et = np.exp(P.l * t)
    e1, e2 = np.exp(P.lam1 * xs), np.exp(P.lam2 * xs)
    den = np.exp(-P.s) - np.exp(-P.r)
    es, er = np.exp(P.s * xs), np.exp(P.r * xs)
    transient = (et * (e1 - e2), et * (P.lam1 * e1 - P.lam2 * e2),
                 et * (P.lam1**2 * e1 - P.lam2**2 * e2), P.l * et * (e1 - e2))
    steady = ((es - er) / den, (P.s * es - P.r * er) / den, (P.s**2 * es - P.r**2 * er) / den)
    return transient, steady


def eriksson_johnson(eps: float = 0.1, l: float = 2.0) -> ProblemSpec:
    """2D-space Eriksson-Johnson problem on (-1, 0) x (-0.5, 0.5), T = 1."""
    P = ErikssonJohnsonParams.from_eps(eps, l)

    def u(x, t):
        (tr, _, _, _), (st, _, _) = _ej_parts(P, x[:, 0], t)
        return tr + np.cos(np.pi * x[:, 1]) * st

    def grad(x, t):
        (_, trx, _, _), (st, stx, _) = _ej_parts(P, x[:, 0], t)
        c, s = np.cos(np.pi * x[:, 1]), np.sin(np.pi * x[:, 1])
        return np.column_stack([trx + c * stx, -np.pi * s * st])

    def lap(x, t):
        (_, _, trxx, _), (st, _, stxx) = _ej_parts(P, x[:, 0], t)
        c = np.cos(np.pi * x[:, 1])
        return trxx + c * (stxx - np.pi**2 * st)

    def dudt(x, t):
        (_, _, _, trt), _ = _ej_parts(P, x[:, 0], t)
        return trt

    b = lambda x, t: np.column_stack([np.ones(len(x)), np.zeros(len(x))])  # noqa: E731
    return from_exact("eriksson_johnson", SPATIAL, eps, b, ExactSolution(u, grad, lap, dudt),
                      bounds=((-1.0, 0.0), (-0.5, 0.5)), t_final=1.0, tagging=dict(DIRICHLET_TAGS),
                      params={"eps": eps, "l": l})


def eriksson_johnson_1d(eps: float = 0.1, l: float = 2.0, t_final: float = 1.0) -> ProblemSpec:
    """1D-space + time analog on the (x, t) box (-1, 0) x (0, T).

    Keeps the x-profiles of the 2D solution and drops the ``cos(pi y)`` factor.
    """
    P = ErikssonJohnsonParams.from_eps(eps, l)

    def u(x, t):
        (tr, _, _, _), (st, _, _) = _ej_parts(P, x[:, 0], t)
        return tr + st

    def grad(x, t):
        (_, trx, _, _), (_, stx, _) = _ej_parts(P, x[:, 0], t)
        return (trx + stx)[:, None]

    def lap(x, t):
        (_, _, trxx, _), (_, _, stxx) = _ej_parts(P, x[:, 0], t)
        return trxx + stxx

    def dudt(x, t):
        (_, _, _, trt), _ = _ej_parts(P, x[:, 0], t)
        return trt

    b = lambda x, t: np.ones((len(x), 1))  # noqa: E731
    return from_exact("eriksson_johnson_1d", SPACE_TIME, eps, b, ExactSolution(u, grad, lap, dudt),
                      bounds=((-1.0, 0.0), (0.0, t_final)), t_final=t_final,
                      tagging=dict(SPACETIME_TAGS), params={"eps": eps, "l": l})


# -- rotating ring (pure convection) ------------------------------------------
def rotating_ring(M: float = 500.0) -> ProblemSpec:
    """Pure convection with ``b = (-y, x)`` on the unit square, eps = 0."""
    if M <= 0:
        raise ValueError("steepness M must be positive")

    def profile(x):
        rho = np.hypot(x[:, 0], x[:, 1])
        sgn = np.sign(rho - 0.5)
        arg = M * (0.15 - np.abs(0.5 - rho))
        return rho, sgn, arg

    def u(x, t):
        _, _, arg = profile(x)
        return 0.5 * t**2 * (1.0 + np.tanh(arg))

    def grad(x, t):
        rho, sgn, arg = profile(x)
        du = 0.5 * t**2 * (-M * sgn) * (1.0 - np.tanh(arg) ** 2)
        rho = np.where(rho == 0, 1.0, rho)
        return (du / rho)[:, None] * x

    def lap(x, t):
        rho, sgn, arg = profile(x)
        sech2 = 1.0 - np.tanh(arg) ** 2
        du = 0.5 * t**2 * (-M * sgn) * sech2
        d2u = 0.5 * t**2 * (-2.0 * sech2 * np.tanh(arg)) * M**2
        rho = np.where(rho == 0, 1.0, rho)
        return d2u + du / rho

    def dudt(x, t):
        _, _, arg = profile(x)
        return t * (1.0 + np.tanh(arg))

    b = lambda x, t: np.column_stack([-x[:, 1], x[:, 0]])  # noqa: E731
    spec = from_exact("rotating_ring", SPATIAL, 0.0, b, ExactSolution(u, grad, lap, dudt),
                      bounds=((0.0, 1.0), (0.0, 1.0)), t_final=1.0, tagging=dict(DIRICHLET_TAGS),
                      params={"M": M})
    return replace(spec, u0=lambda x: np.zeros(len(x)))


def in_ring_band(points, half_width: float = 0.15) -> np.ndarray:
    return np.abs(0.5 - np.hypot(points[:, 0], points[:, 1])) <= half_width


# -- shock problem --------------------------------------------------------------
def shock_problem(eps: float = 1e-3) -> ProblemSpec:
    """Two travelling shocks; data taken verbatim, no exact solution."""
    b = lambda x, t: np.column_stack([-x[:, 0] + 2.0 * x[:, 1], np.zeros(len(x))])  # noqa: E731
    return ProblemSpec(
        name="shock", mode=SPATIAL, eps=eps, b=b,
        div_b=lambda x, t: -np.ones(len(x)),
        f=lambda x, t: -2.0 * x[:, 0] * eps + x[:, 0] * (1.0 - x[:, 1] ** 2),
        u_in=lambda x, t: np.zeros(len(x)), u0=lambda x: np.zeros(len(x)),
        bounds=((-1.0, 1.0), (-1.0, 1.0)), t_final=1.35, tagging=dict(DIRICHLET_TAGS),
        params={"eps": eps})


# -- symbolic manufactured solutions -----------------------------------------------
def manufactured(expr: str, mode: str = SPATIAL, eps: float = 0.1, b=(1.0, 0.0),
                 bounds=None, t_final: float = 1.0, name: str | None = None) -> ProblemSpec:
    """Problem from a closed-form ``u(x, y, t)`` (or ``u(x, t)`` in space-time mode).

    ``b`` is a constant vector (space-time mode uses its first entry).
    """
    import sympy as sp

    x, y, t = sp.symbols("x y t")
    u_sym = sp.sympify(expr)
    space = [x] if mode == SPACE_TIME else [x, y]
    grad_sym = [sp.diff(u_sym, s) for s in space]
    lap_sym = sum(sp.diff(u_sym, s, 2) for s in space)
    dudt_sym = sp.diff(u_sym, t)

    def compile_(e):
        fn = sp.lambdify((x, y, t), e, "numpy")

        def call(pts, tt):
            pts = np.atleast_2d(pts)
            yy = pts[:, 1] if pts.shape[1] > 1 else np.zeros(len(pts))
            return np.broadcast_to(np.asarray(fn(pts[:, 0], yy, tt), dtype=float), (len(pts),)).copy()
        return call

    u_f, lap_f, dudt_f = compile_(u_sym), compile_(lap_sym), compile_(dudt_sym)
    grad_fs = [compile_(g) for g in grad_sym]
    grad_f = lambda pts, tt: np.column_stack([g(pts, tt) for g in grad_fs])  # noqa: E731

    sd = len(space)
    bvec = np.asarray(b, dtype=float).ravel()[:sd]
    bfun = lambda pts, tt: np.tile(bvec, (len(pts), 1))  # noqa: E731
    if bounds is None:
        bounds = ((0.0, 1.0), (0.0, t_final)) if mode == SPACE_TIME else ((0.0, 1.0), (0.0, 1.0))
    tagging = dict(SPACETIME_TAGS) if mode == SPACE_TIME else dict(DIRICHLET_TAGS)
    return from_exact(name or f"manufactured[{expr}]", mode, eps, bfun,
                      ExactSolution(u_f, grad_f, lap_f, dudt_f), bounds=bounds,
                      t_final=t_final, tagging=tagging, params={"expr": expr})


CATALOGUE = {
    "eriksson_johnson": eriksson_johnson,
    "eriksson_johnson_1d": eriksson_johnson_1d,
    "rotating_ring": rotating_ring,
    "shock": shock_problem,
    "manufactured": manufactured,
}


def get_problem(name: str, **params) -> ProblemSpec:
    try:
        factory = CATALOGUE[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(CATALOGUE)}") from None
    return factory(**params)
