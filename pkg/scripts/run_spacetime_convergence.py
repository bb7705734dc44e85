"""Uniform-refinement study on the 1D-space Eriksson-Johnson space-time problem."""
import argparse
from pathlib import Path

from avsfe.estimation import spacetime_solver, uniform_study
from avsfe.mesh import build_rectangle_mesh
from avsfe.problems import eriksson_johnson_1d


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--p", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--levels", type=int, default=5)
    ap.add_argument("--n0", type=int, default=4)
    ap.add_argument("--out", default="results/spacetime")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = eriksson_johnson_1d(args.eps)
    for p in args.p:
        mesh = build_rectangle_mesh(spec.bounds, args.n0, args.n0, spec.tagging)
        report, _ = uniform_study(mesh, spacetime_solver(spec, p=p, condense=True), args.levels)
        report.to_csv(out / f"convergence_p{p}.csv")
        print(f"p={p}")
        for row in report.rows():
            print(f"  dofs {row['dofs']:7d}  L2_u {row['L2_u']:.3e} (eoc {row['eoc_L2_u']:.2f})  "
                  f"H1_u {row['H1_u']:.3e} (eoc {row['eoc_H1_u']:.2f})  est {row['energy_estimate']:.3e}")


if __name__ == "__main__":
    main()
