"""Error norms, energy estimate, Dörfler marking, adaptive loop and rates."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .assembly import SaddleSystem, Solution, assemble_spacetime, solve
from .femspace import Field
from .forms import Geometry, spaces_for
from .mesh import Mesh, bisect
from .problems import SPACE_TIME, ProblemSpec

log = logging.getLogger(__name__)

NORMS = ("L2_u", "H1_u", "L2_q", "Hdiv_q")
CSV_COLUMNS = ("level", "dofs", "h_max", *NORMS, "energy_estimate",
               *(f"eoc_{k}" for k in (*NORMS, "energy_estimate")))


@dataclass
class IndicatorSet:
    """Element indicators ``eta_K``; the total estimate is their l2 sum."""

    eta: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sqrt(np.sum(self.eta**2)))

    def __len__(self):
        return len(self.eta)


def energy_estimate(system: SaddleSystem, solution: Solution) -> IndicatorSet:
    """Element-local test norms of the error representation.

    The test Gram matrix is block diagonal, so ``sum eta_K^2 = e^T G e``.
    """
    e_loc = solution.e[system.spaces.test_map]
    eta2 = np.einsum("ei,eij,ej->e", e_loc, system.G_loc, e_loc)
    return IndicatorSet(np.sqrt(np.maximum(eta2, 0.0)))


def _exact_at(spec: ProblemSpec, X: np.ndarray, t: float | None):
    """Exact u, full gradient (over mesh coordinates), q and div q at points ``X``."""
    ex = spec.exact
    flat = X.reshape(-1, 2)
    if spec.mode == SPACE_TIME:
        xs, tt = flat[:, :1], flat[:, 1]
        gx = np.asarray(ex.grad(xs, tt), dtype=float).reshape(-1, 1)
        dt = np.asarray(ex.dudt(xs, tt), dtype=float).reshape(-1)
        grad = np.column_stack([gx[:, 0], dt])
        q = spec.eps * gx
    else:
        if t is None:
            raise ValueError("spatial-mode errors need the evaluation time")
        xs, tt = flat, np.full(len(flat), float(t))
        grad = np.asarray(ex.grad(xs, tt), dtype=float).reshape(-1, 2)
        q = spec.eps * grad
    u = np.asarray(ex.u(xs, tt), dtype=float).reshape(-1)
    divq = spec.eps * np.asarray(ex.lap(xs, tt), dtype=float).reshape(-1)
    return u, grad, q, divq


def exact_errors(u: Field, q: Field, spec: ProblemSpec, t: float | None = None,
                 order: int | None = None) -> dict:
    """``L2_u``, ``H1_u``, ``L2_q`` and ``Hdiv_q`` errors against the exact bundle.

    ``H1_u`` is the full H1 norm over the mesh coordinates, so in space-time
    mode it includes the time derivative. ``q_ex = eps grad_x u_ex``.
    """
    if spec.exact is None:
        raise ValueError(f"problem {spec.name!r} has no exact solution")
    mesh = u.space.mesh
    order = order or 2 * max(u.space.degree, q.space.degree) + 6
    geom = Geometry(mesh, order)
    pts = geom.quad.points
    ids = np.arange(mesh.n_triangles)
    uh = u.evaluate(ids, pts)[..., 0]
    guh = u.gradient(ids, pts)[:, :, 0, :]
    qh = q.evaluate(ids, pts)
    gq = q.gradient(ids, pts)
    divqh = sum(gq[:, :, c, c] for c in range(q.space.ncomp))
    ue, ge, qe, de = _exact_at(spec, geom.xq, t)
    E, nq = uh.shape
    w = geom.wq
    du = uh - ue.reshape(E, nq)
    dg = guh - ge.reshape(E, nq, 2)
    dq = qh - qe.reshape(E, nq, -1)
    dd = divqh - de.reshape(E, nq)
    l2u = np.sum(w * du**2)
    semi = np.sum(w * np.sum(dg**2, axis=-1))
    l2q = np.sum(w * np.sum(dq**2, axis=-1))
    divq = np.sum(w * dd**2)
    return {"L2_u": math.sqrt(l2u), "H1_u": math.sqrt(l2u + semi),
            "L2_q": math.sqrt(l2q), "Hdiv_q": math.sqrt(l2q + divq)}


def dorfler_mark(indicators: IndicatorSet | np.ndarray, theta: float) -> np.ndarray:
    """Smallest greedy set with ``sum eta_K^2 >= theta^2 sum eta^2``.

    Ties are broken by the lower element id. Returns sorted element ids.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    eta = np.asarray(getattr(indicators, "eta", indicators), dtype=float)
    eta2 = eta**2
    total = eta2.sum()
    if total == 0.0:
        return np.zeros(0, dtype=np.int64)
    if theta == 1.0:
        return np.flatnonzero(eta2 > 0)
    order = np.lexsort((np.arange(len(eta2)), -eta2))
    csum = np.cumsum(eta2[order])
    k = int(np.searchsorted(csum, theta**2 * total * (1.0 - 1e-13))) + 1
    return np.sort(order[:k])


def eoc(errors, h) -> np.ndarray:
    """Rates ``log(e_i/e_{i+1}) / log(h_i/h_{i+1})``; NaN where undefined."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(h, dtype=float)
    if len(e) < 2:
        raise ValueError("need at least two levels for a rate")
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])
    bad = (e[:-1] <= 0) | (e[1:] <= 0) | (h[:-1] == h[1:])
    r[bad] = np.nan
    return r


@dataclass
class LevelRecord:
    level: int
    dofs: int
    h_max: float
    L2_u: float = float("nan")
    H1_u: float = float("nan")
    L2_q: float = float("nan")
    Hdiv_q: float = float("nan")
    energy_estimate: float = float("nan")


@dataclass
class ErrorReport:
    records: list = field(default_factory=list)

    def add(self, record: LevelRecord):
        if self.records and record.dofs <= self.records[-1].dofs:
            log.warning("dof count did not increase (%d -> %d)", self.records[-1].dofs, record.dofs)
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def rates(self, by: str = "h_max") -> dict:
        """EOC per norm; ``by='dofs'`` uses ``h ~ dofs^(-1/2)`` for adaptive meshes."""
        if len(self) < 2:
            return {k: np.zeros(0) for k in (*NORMS, "energy_estimate")}
        h = self.column("h_max") if by == "h_max" else self.column("dofs") ** -0.5
        return {k: eoc(self.column(k), h) for k in (*NORMS, "energy_estimate")}

    def rows(self, by: str = "h_max") -> list[dict]:
        rates = self.rates(by)
        out = []
        for i, r in enumerate(self.records):
            row = asdict(r)
            for k, v in rates.items():
                row[f"eoc_{k}"] = float(v[i - 1]) if i > 0 else float("nan")
            out.append(row)
        return out

    def to_csv(self, path, by: str = "h_max"):
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for row in self.rows(by):
                writer.writerow({k: _fmt(row[k]) for k in CSV_COLUMNS})
        return path

    def to_json(self, by: str = "h_max") -> dict:
        return {"levels": [{k: _json_num(v) for k, v in row.items()} for row in self.rows(by)]}


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _json_num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


# -- solve-estimate-mark-refine ----------------------------------------------------
@dataclass
class SolveResult:
    """What one adaptive step needs from a solver."""

    u: Field
    q: Field
    indicators: IndicatorSet
    dofs: int
    errors: Optional[dict] = None
    payload: object = None


def spacetime_solver(spec: ProblemSpec, p: int = 1, dp: int = 1, p_q: int | None = None,
                     condense: bool = False, u0=None, compute_errors: bool = True) -> Callable:
    """Solver callback running one space-time saddle solve on a given mesh."""
    def run(mesh: Mesh) -> SolveResult:
        spaces = spaces_for(spec, mesh, p=p, dp=dp, p_q=p_q)
        system = assemble_spacetime(spec, mesh, spaces, u0=u0)
        sol = solve(system, condense=condense)
        ind = energy_estimate(system, sol)
        errs = exact_errors(sol.u, sol.q, spec) if compute_errors and spec.exact is not None else None
        return SolveResult(sol.u, sol.q, ind, system.dof_count, errs, payload=(system, sol))
    return run


@dataclass
class AdaptiveResult:
    result: SolveResult
    report: ErrorReport
    meshes: list
    marked: list


def adaptive_loop(mesh: Mesh, solver: Callable[[Mesh], SolveResult], theta: float = 0.5,
                  max_steps: int = 5, tol: float | None = None,
                  observer: Callable | None = None) -> AdaptiveResult:
    """Repeat solve, estimate, mark, bisect.

    Stops after ``max_steps`` solves or once the total estimate drops below
    ``tol``. The mesh is not refined after the last solve.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    report = ErrorReport()
    meshes, marked_sets = [mesh], []
    res = None
    for step in range(max_steps):
        res = solver(mesh)
        rec = LevelRecord(step, res.dofs, mesh.h_max(), energy_estimate=res.indicators.total,
                          **(res.errors or {}))
        report.add(rec)
        if observer is not None:
            observer(step, mesh, res)
        log.info("adapt step %d: %d elements, estimate %.3e", step, mesh.n_triangles, rec.energy_estimate)
        if step == max_steps - 1 or (tol is not None and res.indicators.total < tol):
            break
        marked = dorfler_mark(res.indicators, theta)
        if len(marked) == 0:
            break
        marked_sets.append(marked)
        mesh = bisect(mesh, marked)
        meshes.append(mesh)
    return AdaptiveResult(res, report, meshes, marked_sets)


def uniform_study(mesh: Mesh, solver: Callable[[Mesh], SolveResult], levels: int,
                  observer: Callable | None = None) -> tuple[ErrorReport, SolveResult]:
    """Solve on ``levels`` successively (twice) bisected meshes."""
    from .mesh import uniform_refine

    report = ErrorReport()
    res = None
    for level in range(levels):
        if level:
            mesh = uniform_refine(mesh, 2)
        res = solver(mesh)
        report.add(LevelRecord(level, res.dofs, mesh.h_max(), energy_estimate=res.indicators.total,
                               **(res.errors or {})))
        if observer is not None:
            observer(level, mesh, res)
    return report, res


def report_summary(report: ErrorReport) -> str:
    return json.dumps(report.to_json(), indent=1)
