"""Spatial convergence of generalized-alpha marching on the 2D Eriksson-Johnson problem at T=1."""
import argparse
from pathlib import Path

import numpy as np

from avsfe.estimation import eoc
from avsfe.forms import spaces_for
from avsfe.genalpha import make_params, march
from avsfe.io import write_json
from avsfe.mesh import build_rectangle_mesh
from avsfe.problems import eriksson_johnson


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--tau", type=float, default=1e-2)
    ap.add_argument("--rho-inf", type=float, nargs="+", default=[0.0, 0.9])
    ap.add_argument("--p", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--meshes", type=int, nargs="+", default=[8, 16, 32])
    ap.add_argument("--out", default="results/genalpha")
    args = ap.parse_args()
    spec = eriksson_johnson(args.eps)
    results = []
    for rho in args.rho_inf:
        for p in args.p:
            errs = []
            for n in args.meshes:
                mesh = build_rectangle_mesh(spec.bounds, n, n, spec.tagging)
                res = march(spec, mesh, spaces_for(spec, mesh, p=p), make_params(rho, args.tau),
                            condense=True, log_errors=False)
                errs.append(res.errors["L2_u"])
                print(f"rho={rho} p={p} n={n}: L2_u {errs[-1]:.3e}, dofs {res.dofs}", flush=True)
            rates = eoc(errs, 1.0 / np.array(args.meshes))
            print(f"  EOC {np.round(rates, 2)}")
            results.append(dict(rho_inf=rho, p=p, meshes=args.meshes, L2_u=errs, eoc=rates))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "genalpha_convergence.json", dict(tau=args.tau, runs=results))


if __name__ == "__main__":
    main()
