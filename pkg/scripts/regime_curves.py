"""Expected best-response score against the threshold across noise levels."""

import argparse
import csv
import math

import numpy as np

from capstrat.agent import NoiseModel, noise_regime, regime_thresholds, score_params, solve_scores
from capstrat.scenarios import regime_demo_agent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigmas", default="3.3,1.3,1.1,1.0")
    ap.add_argument("--step", type=float, default=1e-3)
    ap.add_argument("--out", default="regime_curves.csv")
    args = ap.parse_args()

    agent = regime_demo_agent()
    beta = np.array([1.0, 0.0])
    a, c = (float(v) for v in score_params(agent.z, agent.cost.g, beta))
    lo, hi = regime_thresholds(agent.cost.alpha)
    print(f"sigma^2 thresholds: uniqueness {lo:.4f}, contraction {hi:.4f}")
    s = np.arange(-10.0, 20.0, args.step)
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["sigma", "regime", "s", "omega"])
        for sigma in (float(v) for v in args.sigmas.split(",")):
            om = solve_scores(a, c, s, sigma)
            regime = noise_regime(agent.cost, NoiseModel(sigma)).value
            slope = np.max(np.abs(np.diff(om))) / args.step
            print(f"sigma={sigma:<5} {regime:<14} max|d omega/ds|~{slope:.3g} max jump {np.max(np.abs(np.diff(om))):.3g}")
            wr.writerows([sigma, regime, f"{x:.6g}", f"{y:.10g}"] for x, y in zip(s, om))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
