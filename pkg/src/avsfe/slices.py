"""Space-time slab sweeps: solve slice by slice, passing the final-time trace forward."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .estimation import (ErrorReport, IndicatorSet, LevelRecord, NORMS, SolveResult, adaptive_loop,
                         dorfler_mark, spacetime_solver)
from .femspace import Field
from .mesh import LOCAL_EDGES, Mesh, Tag, bisect, build_rectangle_mesh
from .problems import SPACE_TIME, ProblemSpec

log = logging.getLogger(__name__)

ADAPT_BETWEEN = "adapt-between"
ADAPT_AFTER = "adapt-after"
STRATEGIES = (ADAPT_BETWEEN, ADAPT_AFTER)
_TOL = 1e-12


@dataclass
class SliceConfig:
    """Slab partition and adaptivity settings.

    ``boundaries`` are the slab times ``t_0 < ... < t_K``. ``resolution`` is
    the ``(nx, nt)`` grid of every initial slab mesh. ``steps`` counts the
    refinements per slice (adapt-between) or the global re-sweeps
    (adapt-after).
    """

    boundaries: Sequence[float]
    strategy: str = ADAPT_BETWEEN
    steps: int = 0
    theta: float = 0.5
    resolution: tuple = (4, 2)
    p: int = 1
    dp: int = 1
    condense: bool = True

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if len(b) < 2 or np.any(np.diff(b) <= 0):
            raise ValueError("slice boundaries must be strictly increasing with at least two entries")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.steps < 0:
            raise ValueError("number of adaptive steps must be non-negative")
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")

    @property
    def n_slices(self) -> int:
        return len(self.boundaries) - 1

    def windows(self):
        b = list(map(float, self.boundaries))
        return list(zip(b[:-1], b[1:]))


# -- trace transfer ------------------------------------------------------------
class Trace:
    """Final-time trace of a slab solution, evaluable at arbitrary spatial points."""

    def __init__(self, u: Field):
        mesh = u.space.mesh
        edges = mesh.edges_with_tag(Tag.FINAL_TIME)
        if len(edges) == 0:
            raise ValueError("source mesh has no final_time edges")
        tri = mesh.edge_tris[edges, 0]
        local = np.argmax(mesh.tri_edges[tri] == edges[:, None], axis=1)
        tri_v = mesh.triangles[tri]
        a = mesh.vertices[tri_v[np.arange(len(tri)), LOCAL_EDGES[local, 0]]]
        b = mesh.vertices[tri_v[np.arange(len(tri)), LOCAL_EDGES[local, 1]]]
        self.time = float(a[0, 1])
        if not np.allclose(np.r_[a[:, 1], b[:, 1]], self.time, atol=_TOL, rtol=0):
            raise ValueError("final_time edges are not on one time level")
        order = np.argsort(np.minimum(a[:, 0], b[:, 0]))
        self.u, self.tri, self.local = u, tri[order], local[order]
        self.xa, self.xb = a[order, 0], b[order, 0]
        self.lo = np.minimum(self.xa, self.xb)
        self.extent = (float(self.lo.min()), float(np.maximum(self.xa, self.xb).max()))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x = x[:, 0] if x.ndim == 2 else x
        idx = np.clip(np.searchsorted(self.lo, x, side="right") - 1, 0, len(self.lo) - 1)
        s = (x - self.xa[idx]) / (self.xb[idx] - self.xa[idx])
        out = np.empty(len(x))
        ref_a = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        for e in np.unique(idx):
            sel = idx == e
            k = self.local[e]
            pa, pb = ref_a[LOCAL_EDGES[k, 0]], ref_a[LOCAL_EDGES[k, 1]]
            ref = pa[None, :] + s[sel, None] * (pb - pa)[None, :]
            out[sel] = self.u.evaluate([self.tri[e]], ref)[0, :, 0]
        return out


def transfer_trace(u: Field, target_mesh: Mesh) -> Trace:
    """Trace of ``u`` on its final-time edges, checked against the target's initial edges.

    The target slab interpolates the returned callable at its bottom nodes,
    which reproduces any trace that is polynomial of degree ``<= p`` on each
    target edge.
    """
    trace = Trace(u)
    edges = target_mesh.edges_with_tag(Tag.INITIAL_TIME)
    if len(edges) == 0:
        raise ValueError("target mesh has no initial_time edges")
    pts = target_mesh.vertices[target_mesh.edges[edges].ravel()]
    extent = (float(pts[:, 0].min()), float(pts[:, 0].max()))
    if not np.allclose(extent, trace.extent, atol=_TOL, rtol=0):
        raise ValueError(f"spatial extents differ: source {trace.extent}, target {extent}")
    if not np.allclose(pts[:, 1], trace.time, atol=_TOL, rtol=0):
        raise ValueError(f"target initial time {pts[0, 1]} does not match source final time {trace.time}")
    return trace


def initial_time_dofs(u: Field) -> np.ndarray:
    from .assembly import tagged_scalar_dofs
    return tagged_scalar_dofs(u.space, Tag.INITIAL_TIME)


# -- sweeps ---------------------------------------------------------------------------
@dataclass
class SliceResult:
    window: tuple
    mesh: Mesh
    result: SolveResult
    report: ErrorReport | None = None

    @property
    def u(self) -> Field:
        return self.result.u


@dataclass
class SweepResult:
    slices: list
    report: ErrorReport
    gluing_jumps: list = field(default_factory=list)
    call_log: list = field(default_factory=list)

    @property
    def max_dofs(self) -> int:
        return max(s.result.dofs for s in self.slices)

    def global_errors(self) -> dict:
        """Norms over the whole space-time domain (slice errors combined in l2)."""
        out = {}
        for k in NORMS:
            vals = [s.result.errors[k] for s in self.slices if s.result.errors]
            out[k] = math.sqrt(sum(v * v for v in vals)) if vals else float("nan")
        out["energy_estimate"] = math.sqrt(sum(s.result.indicators.total ** 2 for s in self.slices))
        return out


def slab_meshes(spec: ProblemSpec, config: SliceConfig) -> list[Mesh]:
    nx, nt = config.resolution
    return [build_rectangle_mesh((spec.bounds[0], w), nx, nt, spec.tagging) for w in config.windows()]


def _gluing_jump(trace: Trace, result: SolveResult) -> float:
    """Max mismatch between the source trace and the target's bottom nodal values."""
    dofs = initial_time_dofs(result.u)
    xs = result.u.space.node_coordinates()[dofs]
    return float(np.abs(result.u.coeffs[dofs] - trace(xs[:, :1])).max(initial=0.0))


def _record(level: int, results: list[SolveResult], meshes: list[Mesh]) -> LevelRecord:
    errs = {}
    if all(r.errors for r in results):
        errs = {k: math.sqrt(sum(r.errors[k] ** 2 for r in results)) for k in NORMS}
    est = math.sqrt(sum(r.indicators.total ** 2 for r in results))
    return LevelRecord(level, max(r.dofs for r in results), max(m.h_max() for m in meshes),
                       energy_estimate=est, **errs)


def sweep(spec: ProblemSpec, config: SliceConfig, meshes: list[Mesh] | None = None,
          call_log: list | None = None) -> SweepResult:
    """Solve all slabs in time order with either adaptivity strategy."""
    if spec.mode != SPACE_TIME:
        raise ValueError("slab sweeps need a space-time problem")
    meshes = list(meshes) if meshes is not None else slab_meshes(spec, config)
    if len(meshes) != config.n_slices:
        raise ValueError("need one initial mesh per slice")
    call_log = [] if call_log is None else call_log
    if config.strategy == ADAPT_BETWEEN:
        return _adapt_between(spec, config, meshes, call_log)
    return _adapt_after(spec, config, meshes, call_log)


def _solver(spec, config, window, u0):
    return spacetime_solver(spec.with_time_window(*window), p=config.p, dp=config.dp,
                            condense=config.condense, u0=u0)


def _adapt_between(spec, config, meshes, call_log) -> SweepResult:
    slices, jumps = [], []
    u0, trace = None, None
    for k, (window, mesh) in enumerate(zip(config.windows(), meshes)):
        if trace is not None:
            call_log.append(("transfer", k - 1, k))
            transfer_trace(trace.u, mesh)
        call_log.append(("solve", k))
        ad = adaptive_loop(mesh, _solver(spec, config, window, u0), theta=config.theta,
                           max_steps=config.steps + 1)
        if trace is not None:
            jumps.append(_gluing_jump(trace, ad.result))
        slices.append(SliceResult(window, ad.meshes[-1], ad.result, ad.report))
        trace = Trace(ad.result.u)
        u0 = trace
    report = ErrorReport()
    n_rows = min(len(s.report) for s in slices)
    for i in range(n_rows):
        recs = [s.report.records[i] for s in slices]
        errs = {k: math.sqrt(sum(getattr(r, k) ** 2 for r in recs)) for k in NORMS}
        report.add(LevelRecord(i, max(r.dofs for r in recs), max(r.h_max for r in recs),
                               energy_estimate=math.sqrt(sum(r.energy_estimate ** 2 for r in recs)), **errs))
    return SweepResult(slices, report, jumps, call_log)


def _sweep_once(spec, config, meshes, call_log, jumps):
    results, trace, u0 = [], None, None
    for k, (window, mesh) in enumerate(zip(config.windows(), meshes)):
        if trace is not None:
            call_log.append(("transfer", k - 1, k))
            transfer_trace(trace.u, mesh)
        call_log.append(("solve", k))
        res = _solver(spec, config, window, u0)(mesh)
        if trace is not None:
            jumps.append(_gluing_jump(trace, res))
        results.append(res)
        trace = Trace(res.u)
        u0 = trace
    return results


def _adapt_after(spec, config, meshes, call_log) -> SweepResult:
    report, jumps = ErrorReport(), []
    results = _sweep_once(spec, config, meshes, call_log, jumps)
    report.add(_record(0, results, meshes))
    for rnd in range(1, config.steps + 1):
        meshes = [bisect(m, dorfler_mark(r.indicators, config.theta)) for m, r in zip(meshes, results)]
        results = _sweep_once(spec, config, meshes, call_log, jumps)
        report.add(_record(rnd, results, meshes))
    slices = [SliceResult(w, m, r) for w, m, r in zip(config.windows(), meshes, results)]
    return SweepResult(slices, report, jumps, call_log)
