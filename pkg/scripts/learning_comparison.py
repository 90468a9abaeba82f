"""Competition-aware vs strategy-aware vs capacity-aware criteria over seeds.

Presets: ``toy`` (d = 2), ``high_dim`` (d = 10) and ``ingested`` (a student
CSV compressed into k-means types).
"""

import argparse
import csv
import time

import numpy as np

from capstrat.finite import SimConfig
from capstrat.ingest import IngestConfig, ingest_csv
from capstrat.learner import LearnConfig, Method, capacity_aware_baseline, learn, project_sphere
from capstrat.population import equilibrium_policy_value, optimal_beta_2d
from capstrat.scenarios import high_dim_distribution, toy_distribution

PRESETS = {
    # dist, comp lr, strat lr, init, noisy RCT covariates
    "toy": (toy_distribution, 0.5, 0.25, lambda d: np.eye(d)[0], False),
    "high_dim": (high_dim_distribution, 0.5, 0.5, lambda d: project_sphere(np.ones(d)), True),
    "ingested": (None, 0.1, 0.1, lambda d: "random", True),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", choices=sorted(PRESETS), default="toy")
    ap.add_argument("--csv", help="student CSV for the ingested preset")
    ap.add_argument("--outcome", default="attend")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--n", type=int, default=100000)
    ap.add_argument("--n-rct", type=int, default=10**6)
    ap.add_argument("--q", type=float, default=0.7)
    ap.add_argument("--out", default="learning_comparison.csv")
    args = ap.parse_args()

    make, lr_c, lr_s, init_fn, noisy = PRESETS[args.preset]
    if args.preset == "ingested":
        if not args.csv:
            ap.error("--csv is required for the ingested preset")
        dist = ingest_csv(args.csv, IngestConfig(outcome=args.outcome))
    else:
        dist = make()
    init = init_fn(dist.dim)
    v_star = optimal_beta_2d(dist, args.q)[2] if dist.dim == 2 else float("nan")
    sim = SimConfig(n=args.n, b_beta=0.025, b_s=0.2)
    rows = []
    for seed in range(args.seeds):
        for method, lr in ((Method.COMPETITION, lr_c), (Method.STRATEGY, lr_s)):
            t0 = time.time()
            tr = learn(dist, LearnConfig(args.epochs, lr, sim, 50, method, init), args.q, np.random.default_rng(seed))
            rows.append([seed, method.value, tr.final_v_eq])
            print(f"seed {seed} {method.value:<12} V_eq {tr.final_v_eq:.4f} ({time.time() - t0:.0f}s)", flush=True)
        b = capacity_aware_baseline(dist, args.n_rct, args.q, np.random.default_rng(seed), noisy_covariates=noisy)
        rows.append([seed, "capacity", equilibrium_policy_value(dist, b, args.q)])
        print(f"seed {seed} capacity     V_eq {rows[-1][2]:.4f}", flush=True)
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["seed", "method", "v_eq", "gap_to_optimum"])
        wr.writerows([s, m, f"{v:.10g}", f"{v_star - v:.10g}"] for s, m, v in rows)
    for m in ("competition", "strategy", "capacity"):
        vals = np.array([v for _, mm, v in rows if mm == m])
        print(f"{m:<12} median V_eq {np.median(vals):.4f}  mean {vals.mean():.4f} +- {vals.std():.4f}"
              + ("" if np.isnan(v_star) else f"  median gap {np.median(v_star - vals):.4f}"))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
