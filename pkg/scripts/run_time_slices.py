"""Two-slab sweeps with both adaptivity strategies against a single adaptive slab."""
import argparse
from pathlib import Path

from avsfe.estimation import adaptive_loop, spacetime_solver
from avsfe.io import write_json
from avsfe.mesh import build_rectangle_mesh
from avsfe.problems import eriksson_johnson_1d
from avsfe.slices import ADAPT_AFTER, ADAPT_BETWEEN, SliceConfig, sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, default=0.05)
    ap.add_argument("--between-steps", type=int, default=13)
    ap.add_argument("--after-steps", type=int, default=6)
    ap.add_argument("--single-steps", type=int, default=18)
    ap.add_argument("--theta", type=float, default=0.5)
    ap.add_argument("--out", default="results/slices")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = eriksson_johnson_1d(args.eps)
    summary = {}
    for strategy, steps in ((ADAPT_BETWEEN, args.between_steps), (ADAPT_AFTER, args.after_steps)):
        res = sweep(spec, SliceConfig([0.0, 0.5, 1.0], strategy=strategy, steps=steps, theta=args.theta))
        res.report.to_csv(out / f"{strategy}.csv")
        summary[strategy] = dict(max_dofs=res.max_dofs, errors=res.global_errors(), gluing_jumps=res.gluing_jumps)
        print(f"{strategy}: max dofs {res.max_dofs}, L2_u {summary[strategy]['errors']['L2_u']:.3e}, "
              f"max gluing jump {max(res.gluing_jumps):.1e}")
    single = adaptive_loop(build_rectangle_mesh(spec.bounds, 4, 4, spec.tagging),
                           spacetime_solver(spec, condense=True), theta=args.theta, max_steps=args.single_steps)
    single.report.to_csv(out / "single_slab.csv", by="dofs")
    summary["single"] = single.report.to_json(by="dofs")
    write_json(out / "summary.json", summary)


if __name__ == "__main__":
    main()
