"""Batch command line: ``avsfe run <config> [overrides]``.

Exit status 0 on success, 1 for configuration errors, 2 for solver failures.
The environment variable ``AVSFE_THREADS`` caps BLAS/LAPACK threads.
"""
from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .assembly import SolverError, assemble_spacetime, solve
from .config import MODES, ConfigError, RunConfig, load_config
from .estimation import (adaptive_loop, energy_estimate, exact_errors, spacetime_solver,
                         uniform_study)
from .forms import spaces_for
from .genalpha import genalpha_solver, make_params, march
from .mesh import build_rectangle_mesh
from .problems import SPACE_TIME
from .slices import SliceConfig, sweep

log = logging.getLogger("avsfe")
THREADS_ENV = "AVSFE_THREADS"


def _fields(u, q, mesh):
    return {"u": u, "q": q}


def _solver_for(cfg: RunConfig, spec):
    if spec.mode == SPACE_TIME:
        return spacetime_solver(spec, p=cfg.p, dp=cfg.dp, p_q=cfg.p_q, condense=cfg.condense)
    return genalpha_solver(spec, make_params(cfg.rho_inf, cfg.tau), p=cfg.p, dp=cfg.dp, p_q=cfg.p_q,
                           condense=cfg.condense)


def run_config(cfg: RunConfig) -> dict:
    """Execute a validated configuration and write its artifacts into ``cfg.out``."""
    cfg.validate()
    np.random.seed(cfg.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.build_problem()
    mesh = build_rectangle_mesh(spec.bounds, *cfg.resolution, spec.tagging)
    summary = {"problem": cfg.problem, "mode": cfg.mode, "problem_params": cfg.problem_params,
               "p": cfg.p, "dp": cfg.dp, "seed": cfg.seed}

    if cfg.mode == "space-time":
        spaces = spaces_for(spec, mesh, p=cfg.p, dp=cfg.dp, p_q=cfg.p_q)
        system = assemble_spacetime(spec, mesh, spaces)
        sol = solve(system, condense=cfg.condense)
        ind = energy_estimate(system, sol)
        summary.update(dofs=system.dof_count, trial_dofs=system.n_trial, test_dofs=system.n_test,
                       energy_estimate=ind.total, orthogonality=sol.orthogonality)
        if spec.exact is not None:
            summary["errors"] = exact_errors(sol.u, sol.q, spec)
        if cfg.vtk:
            io.write_vtk(out / "solution.vtk", mesh, _fields(sol.u, sol.q, mesh), {"indicator": ind.eta})

    elif cfg.mode == "genalpha":
        spaces = spaces_for(spec, mesh, p=cfg.p, dp=cfg.dp, p_q=cfg.p_q)
        params = make_params(cfg.rho_inf, cfg.tau)
        res = march(spec, mesh, spaces, params, condense=cfg.condense)
        io.write_step_csv(out / "steps.csv", res.log)
        summary.update(dofs=res.dofs, steps=len(res.log), t_final=res.state.t,
                       energy_estimate=res.indicators.total, errors=res.errors, max_abs_u=res.max_abs_u,
                       alpha_m=params.alpha_m, alpha_f=params.alpha_f, gamma=params.gamma)
        if cfg.vtk:
            io.write_vtk(out / "final.vtk", mesh, _fields(res.state.u, res.state.q, mesh),
                         {"indicator": res.indicators.eta})

    elif cfg.mode == "converge":
        def obs(level, m, r):
            if cfg.vtk:
                io.write_vtk(out / f"level_{level:02d}.vtk", m, _fields(r.u, r.q, m), {"indicator": r.indicators.eta})
        report, _ = uniform_study(mesh, _solver_for(cfg, spec), cfg.levels, observer=obs)
        io.write_csv(report, out / "report.csv")
        summary.update(report.to_json(), final=report.rows()[-1])

    elif cfg.mode == "adapt":
        def obs(step, m, r):
            if cfg.vtk:
                io.write_vtk(out / f"adapt_{step:03d}.vtk", m, _fields(r.u, r.q, m), {"indicator": r.indicators.eta})
        ad = adaptive_loop(mesh, _solver_for(cfg, spec), theta=cfg.theta, max_steps=cfg.steps,
                           tol=cfg.tol, observer=obs)
        io.write_csv(ad.report, out / "report.csv")
        summary.update(ad.report.to_json(by="dofs"), final=ad.report.rows(by="dofs")[-1],
                       marked=[len(m) for m in ad.marked])

    elif cfg.mode == "slices":
        sc = SliceConfig(cfg.slices, strategy=cfg.strategy, steps=cfg.steps or 0,
                         theta=cfg.theta if cfg.theta is not None else 0.5,
                         resolution=tuple(cfg.resolution), p=cfg.p, dp=cfg.dp, condense=cfg.condense)
        res = sweep(spec, sc)
        io.write_csv(res.report, out / "report.csv")
        if cfg.vtk:
            for k, s in enumerate(res.slices):
                io.write_vtk(out / f"slice_{k}.vtk", s.mesh, _fields(s.u, s.result.q, s.mesh),
                             {"indicator": s.result.indicators.eta})
        summary.update(res.report.to_json(), max_dofs=res.max_dofs, errors=res.global_errors(),
                       gluing_jumps=res.gluing_jumps, strategy=cfg.strategy)
    io.write_json(out / "summary.json", summary)
    return summary


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="avsfe", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute a TOML or JSON run configuration")
    run.add_argument("config")
    run.add_argument("--mode", choices=MODES)
    run.add_argument("--levels", type=int)
    run.add_argument("--theta", type=float)
    run.add_argument("--rho-inf", dest="rho_inf", type=float)
    run.add_argument("--tau", type=float)
    run.add_argument("--out")
    return ap


def _thread_limit():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(mode=args.mode, levels=args.levels, theta=args.theta,
                                                      rho_inf=args.rho_inf, tau=args.tau, out=args.out)
        cfg.validate()
        with _thread_limit():
            summary = run_config(cfg)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for p in exc.problems:
            print(f"  {p}", file=sys.stderr)
        return 1
    except SolverError as exc:
        where = getattr(exc, "where", None)
        print(f"solver error (avsfe.assembly{', ' + where if where else ''}): {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # inconsistent settings only detectable while building the run (e.g. tau vs t_final)
        print(f"configuration error:\n  {exc}", file=sys.stderr)
        return 1
    print(f"wrote {cfg.out} ({summary['mode']})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
