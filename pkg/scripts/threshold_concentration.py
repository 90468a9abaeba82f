"""Finite-population threshold dynamics around the mean-field equilibrium."""

import argparse

import numpy as np

from capstrat.finite import SimConfig, stochastic_fpi, threshold_trace_csv
from capstrat.population import equilibrium_threshold, optimal_beta_2d
from capstrat.scenarios import toy_distribution


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", default="100,1000,10000")
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--q", type=float, default=0.7)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="threshold_traces.csv")
    args = ap.parse_args()

    dist = toy_distribution()
    _, beta, _ = optimal_beta_2d(dist, args.q)
    s_star = equilibrium_threshold(dist, beta, args.q)
    traces = {}
    for n in (int(v) for v in args.n.split(",")):
        tr = stochastic_fpi(dist, beta, SimConfig(n=n), 0.0, args.steps, np.random.default_rng([args.seed, n]))
        traces[f"n={n}"] = tr
        tail = tr[-20:]
        print(f"n={n:<7} trailing mean {tail.mean():.4f} std {tail.std():.4f} (s*={s_star:.4f})")
    threshold_trace_csv(args.out, traces, s_star)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
