"""Equilibrium policy value over the criterion angle and group shares above threshold."""

import argparse
import csv
import math

import numpy as np

from capstrat.learner import capacity_aware_baseline
from capstrat.population import equilibrium_policy_value, natural_share_above, optimal_beta_2d, polar_beta
from capstrat.scenarios import toy_distribution


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--q", type=float, default=0.7)
    ap.add_argument("--points", type=int, default=361)
    ap.add_argument("--n-rct", type=int, default=10**6)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="angle_sweep.csv")
    args = ap.parse_args()

    dist = toy_distribution()
    naturals = dist.tag_mask("natural")
    thetas = np.linspace(-math.pi, math.pi, args.points, endpoint=False)
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["theta", "v_eq", "natural_share"])
        for t in thetas:
            b = polar_beta(t)
            wr.writerow([f"{t:.6f}", f"{equilibrium_policy_value(dist, b, args.q):.10g}",
                         f"{natural_share_above(dist, b, args.q, naturals):.6f}"])
    theta, beta, v = optimal_beta_2d(dist, args.q)
    cap = capacity_aware_baseline(dist, args.n_rct, args.q, np.random.default_rng(args.seed))
    print(f"optimum theta={theta:.4f} beta={np.round(beta, 4)} V={v:.4f}")
    print(f"capacity-aware beta={np.round(cap, 4)} V={equilibrium_policy_value(dist, cap, args.q):.4f}")
    print(f"natural share above threshold: cap {natural_share_above(dist, cap, args.q, naturals):.3f}, "
          f"optimum {natural_share_above(dist, beta, args.q, naturals):.3f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
