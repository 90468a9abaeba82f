"""Relative error of the policy-gradient estimate against the analytic oracle."""

import argparse
import csv
import math

import numpy as np

from capstrat.estimators import policy_gradient
from capstrat.finite import SimConfig, run_perturbed_round, stochastic_fpi
from capstrat.population import gradient_oracle, polar_beta, tangent_project
from capstrat.scenarios import toy_distribution


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--theta", type=float, default=None, help="criterion angle; default is the steepest one")
    ap.add_argument("--n", default="25000,50000,100000,200000")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--b-beta", type=float, default=0.025)
    ap.add_argument("--b-s", type=float, default=0.2)
    ap.add_argument("--q", type=float, default=0.7)
    ap.add_argument("--out", default="gradient_accuracy.csv")
    args = ap.parse_args()

    dist = toy_distribution()
    if args.theta is None:
        grid = np.linspace(-math.pi, math.pi, 72, endpoint=False)
        mags = [np.linalg.norm(tangent_project(polar_beta(t), gradient_oracle(dist, polar_beta(t), args.q).policy)) for t in grid]
        args.theta = float(grid[int(np.argmax(mags))])
    beta = polar_beta(args.theta)
    orc = gradient_oracle(dist, beta, args.q)
    truth = {k: tangent_project(beta, getattr(orc, k)) for k in ("model", "equilibrium", "policy")}
    print(f"theta={args.theta:.4f} |MG|={np.linalg.norm(truth['model']):.4f} "
          f"|EG|={np.linalg.norm(truth['equilibrium']):.4f} |PG|={np.linalg.norm(truth['policy']):.4f}")
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["n", "seed", "mg_rel_err", "eg_rel_err", "pg_rel_err"])
        for n in (int(v) for v in args.n.split(",")):
            cfg = SimConfig(n=n, b_beta=args.b_beta, b_s=args.b_s)
            errs = []
            for seed in range(args.seeds):
                rng = np.random.default_rng([seed, n])
                s = stochastic_fpi(dist, beta, cfg, orc.s_star, 20, rng)[-1]
                rep = policy_gradient(run_perturbed_round(dist, beta, cfg, s, rng), args.b_beta, args.b_s).tangent(beta)
                e = [np.linalg.norm(rep[k] - truth[t]) / np.linalg.norm(truth[t])
                     for k, t in (("model_grad", "model"), ("eq_grad", "equilibrium"), ("policy_grad", "policy"))]
                errs.append(e)
                wr.writerow([n, seed] + [f"{v:.6g}" for v in e])
            med = np.median(errs, axis=0)
            print(f"n={n:<7} median rel err MG {med[0]:.3f} EG {med[1]:.3f} PG {med[2]:.3f}", flush=True)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
