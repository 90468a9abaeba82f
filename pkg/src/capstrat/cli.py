"""Command-line front end.

Every numeric knob can come from a JSON config (``--config``) and be
overridden by the matching flag.  Outputs are CSV/JSON written under ``--out``.
Exit codes: 0 success, 1 numerical failure, 2 bad input.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    CapstratError,
    DegenerateStepError,
    IllConditionedError,
    InvalidInputError,
    NonConvergenceError,
    RankError,
    RegimeError,
)

log = logging.getLogger("capstrat")

EXPERIMENT_COMMANDS = {"simulate", "learn", "grad-check", "ingest"}

DEFAULTS = {
    "common": {"dist": "toy", "dist_seed": None, "q": 0.7, "out": ".", "beta": None, "theta": None},
    "eq-solve": {"s0": 0.0, "sweep_beta": False, "n_grid": 361, "sweep_points": 201},
    "simulate": {"n": "100,1000,10000", "steps": 100, "b_beta": 0.0, "b_s": 0.0, "s0": 0.0, "record": False},
    "learn": {
        "method": "competition",
        "epochs": 100,
        "lr": None,
        "n": 100000,
        "b_beta": 0.025,
        "b_s": 0.2,
        "equilibrate_steps": 50,
        "init": None,
        "n_rct": 1000000,
        "rct_noisy": False,
    },
    "grad-check": {"n": "10000,100000", "b_beta": "0.025", "b_s": 0.2, "reps": 5, "warmup": 20},
    "ingest": {
        "csv": None,
        "k": 8,
        "outcome": "attend",
        "s_bar": 19.5,
        "sigma": 1.20,
        "g_test": 0.1,
        "c_grades": 1.0,
        "restarts": 10,
        "check_roundtrip": False,
        "dist_out": "distribution.json",
    },
}


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _floats(text) -> list[float]:
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise InvalidInputError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text) -> list[int]:
    return [int(round(v)) for v in _floats(text)]


def _fmt(v) -> str:
    return format(float(v), ".17g")


def load_distribution(spec, seed=None):
    from .population import TypeDistribution
    from .scenarios import high_dim_distribution, toy_distribution

    if spec == "toy":
        return toy_distribution() if seed is None else toy_distribution(seed)
    if spec in ("high_dim", "high-dim"):
        return high_dim_distribution() if seed is None else high_dim_distribution(seed)
    path = Path(spec)
    if not path.exists():
        raise InvalidInputError(f"distribution file {spec} not found")
    return TypeDistribution.from_json(path)


def _beta(opts, dist, default=None):
    from .learner import project_sphere
    from .population import polar_beta

    if opts.get("theta") is not None:
        if dist.dim != 2:
            raise InvalidInputError("--theta only applies to d = 2")
        return polar_beta(float(opts["theta"]))
    if opts.get("beta") is not None:
        b = np.array(_floats(opts["beta"]))
        if b.size != dist.dim:
            raise InvalidInputError(f"beta must have {dist.dim} entries")
        return project_sphere(b)
    if default is not None:
        return default
    return np.ones(dist.dim) / math.sqrt(dist.dim)


class Writer:
    """Output directory plus the timestamp-line policy for CSV files."""

    def __init__(self, out: Path, reproducible: bool):
        self.out = out
        self.reproducible = reproducible
        out.mkdir(parents=True, exist_ok=True)

    def csv(self, name, header, rows) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            wr.writerows(rows)
        return self.stamp(path)

    def stamp(self, path: Path) -> Path:
        """Prepend a ``# generated`` line unless running reproducibly."""
        if not self.reproducible:
            now = _dt.datetime.now().isoformat(timespec="seconds")
            path.write_text(f"# generated {now}\n" + path.read_text())
        return path

    def json(self, name, doc) -> Path:
        path = self.out / name
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_eq_solve(opts, w: Writer) -> dict:
    from .population import (
        equilibrium_policy_value,
        meanfield_fixed_point,
        optimal_beta_2d,
        polar_beta,
        quantile,
        score_cdf,
    )

    dist = load_distribution(opts["dist"], opts["dist_seed"])
    beta = _beta(opts, dist)
    q = opts["q"]
    try:
        res = meanfield_fixed_point(dist, beta, q, s0=opts["s0"])
    except NonConvergenceError as exc:
        w.csv("nonconvergence_trace.csv", ["iter", "s"], [[i, _fmt(s)] for i, s in enumerate(exc.trace)])
        raise
    doc = {
        "beta": beta.tolist(),
        "q": q,
        "s_star": res.s_star,
        "iterations": res.iterations,
        "residual": res.residual,
        "kappa_hat": res.kappa_hat,
        "v_eq": equilibrium_policy_value(dist, beta, q),
        "regime": dist.regime().value,
    }
    w.json("equilibrium.json", doc)
    grid = np.linspace(res.s_star - 4 * dist.sigma, res.s_star + 4 * dist.sigma, opts["sweep_points"])
    w.csv(
        "quantile_sweep.csv",
        ["s", "quantile", "cdf_at_s"],
        [[_fmt(s), _fmt(quantile(dist, beta, s, q)), _fmt(score_cdf(dist, beta, s, s))] for s in grid],
    )
    if opts["sweep_beta"]:
        if dist.dim != 2:
            raise InvalidInputError("--sweep-beta needs a two-dimensional distribution")
        thetas = np.linspace(-math.pi, math.pi, opts["n_grid"], endpoint=False)
        w.csv(
            "theta_sweep.csv",
            ["theta", "beta_1", "beta_2", "v_eq"],
            [
                [_fmt(t), *map(_fmt, polar_beta(t)), _fmt(equilibrium_policy_value(dist, polar_beta(t), q))]
                for t in thetas
            ],
        )
        theta, b, v = optimal_beta_2d(dist, q)
        doc["optimum"] = {"theta": theta, "beta": b.tolist(), "v_eq": v}
        w.json("equilibrium.json", doc)
    return doc


def cmd_simulate(opts, w: Writer) -> dict:
    from .finite import SimConfig, run_perturbed_round, stochastic_fpi, threshold_trace_csv
    from .population import equilibrium_threshold

    dist = load_distribution(opts["dist"], opts["dist_seed"])
    beta = _beta(opts, dist)
    s_star = equilibrium_threshold(dist, beta, opts["q"])
    rng = np.random.default_rng(opts["seed"])
    traces = {}
    last = None
    for n in _ints(opts["n"]):
        cfg = SimConfig(n=n, q=opts["q"], b_beta=opts["b_beta"], b_s=opts["b_s"], seed=opts["seed"])
        traces[f"n={n}"] = stochastic_fpi(dist, beta, cfg, opts["s0"], opts["steps"], rng)
        last = cfg
    path = w.out / "threshold_trace.csv"
    threshold_trace_csv(path, traces, s_star)
    w.stamp(path)
    doc = {"s_star": s_star, "traces": {k: float(v[-1]) for k, v in traces.items()}}
    if opts["record"]:
        rec = run_perturbed_round(dist, beta, last, float(traces[f"n={last.n}"][-1]), rng)
        rec.to_csv(w.out / "experiment_record.csv")
        w.stamp(w.out / "experiment_record.csv")
    w.json("simulate.json", doc)
    return doc


DEFAULT_LR = {"competition": 0.5, "strategy": 0.25}


def cmd_learn(opts, w: Writer) -> dict:
    from .finite import SimConfig
    from .learner import LearnConfig, capacity_aware_baseline, learn
    from .population import equilibrium_policy_value, optimal_beta_2d

    dist = load_distribution(opts["dist"], opts["dist_seed"])
    q = opts["q"]
    methods = ["competition", "strategy", "capacity"] if opts["method"] == "all" else [opts["method"]]
    init = opts["init"]
    if init is not None and str(init).lower() != "random":
        init = np.array(_floats(init))
    elif init is None:
        init = _beta(opts, dist)
    summary = []
    for k, m in enumerate(methods):
        rng = np.random.default_rng([opts["seed"], k])
        if m == "capacity":
            b = capacity_aware_baseline(dist, opts["n_rct"], q, rng, bool(opts["rct_noisy"]))
            summary.append({"method": m, "final_beta": b.tolist(), "final_v_eq": equilibrium_policy_value(dist, b, q)})
            w.json(f"final_{m}.json", summary[-1])
            continue
        if m not in DEFAULT_LR:
            raise InvalidInputError(f"unknown method {m!r}")
        lr = DEFAULT_LR[m] if opts["lr"] is None else opts["lr"]
        sim = SimConfig(n=opts["n"], q=q, b_beta=opts["b_beta"], b_s=opts["b_s"], seed=opts["seed"])
        cfg = LearnConfig(opts["epochs"], lr, sim, opts["equilibrate_steps"], m, init)
        trace = learn(dist, cfg, q, rng)
        trace.to_csv(w.out / f"learn_{m}.csv")
        w.stamp(w.out / f"learn_{m}.csv")
        summary.append(trace.summary())
        w.json(f"final_{m}.json", summary[-1])
    rows = []
    best = optimal_beta_2d(dist, q)[2] if dist.dim == 2 else None
    for s in summary:
        gap = "" if best is None else _fmt(best - s["final_v_eq"])
        rows.append([s["method"], _fmt(s["final_v_eq"]), gap, " ".join(_fmt(b) for b in s["final_beta"])])
    w.csv("learn_summary.csv", ["method", "v_eq", "gap_to_optimum", "beta"], rows)
    return {"methods": summary}


def cmd_grad_check(opts, w: Writer) -> dict:
    from .estimators import policy_gradient
    from .finite import SimConfig, run_perturbed_round, stochastic_fpi
    from .population import gradient_oracle, tangent_project

    dist = load_distribution(opts["dist"], opts["dist_seed"])
    beta = _beta(opts, dist)
    q = opts["q"]
    orc = gradient_oracle(dist, beta, q)
    truth = {
        "mg": tangent_project(beta, orc.model),
        "eg": tangent_project(beta, orc.equilibrium),
        "pg": tangent_project(beta, orc.policy),
    }
    rows, errs = [], {}
    for n in _ints(opts["n"]):
        for bb in _floats(opts["b_beta"]):
            sim = SimConfig(n=n, q=q, b_beta=bb, b_s=opts["b_s"], seed=opts["seed"])
            for rep in range(opts["reps"]):
                rng = np.random.default_rng([opts["seed"], n, rep])
                s = stochastic_fpi(dist, beta, sim, orc.s_star, opts["warmup"], rng)[-1]
                rec = run_perturbed_round(dist, beta, sim, s, rng)
                rep_ = policy_gradient(rec, bb, opts["b_s"], guard=False)
                est = rep_.tangent(beta)
                row = [n, _fmt(bb), _fmt(opts["b_s"]), rep]
                for key, name in (("mg", "model_grad"), ("eg", "eq_grad"), ("pg", "policy_grad")):
                    t = truth[key]
                    err = np.linalg.norm(est[name] - t) / max(np.linalg.norm(t), 1e-300)
                    row += [_fmt(np.linalg.norm(est[name])), _fmt(np.linalg.norm(t)), _fmt(err)]
                    if key == "pg":
                        errs.setdefault((n, bb), []).append(err)
                rows.append(row)
    header = ["n", "b_beta", "b_s", "rep"]
    for key in ("mg", "eg", "pg"):
        header += [f"{key}_norm_est", f"{key}_norm_true", f"{key}_rel_err"]
    w.csv("grad_check.csv", header, rows)
    doc = {
        "beta": beta.tolist(),
        "s_star": orc.s_star,
        "median_pg_rel_err": {f"n={n},b_beta={bb}": float(np.median(v)) for (n, bb), v in errs.items()},
        "true_norms": {k: float(np.linalg.norm(v)) for k, v in truth.items()},
    }
    w.json("grad_check.json", doc)
    return doc


def cmd_ingest(opts, w: Writer) -> dict:
    from .agent import best_response
    from .ingest import IngestConfig, build_unobservables, kmeans_types, load_student_csv

    if not opts["csv"]:
        raise InvalidInputError("ingest needs --csv")
    cfg = IngestConfig(
        s_bar=opts["s_bar"],
        sigma=opts["sigma"],
        g_test=opts["g_test"],
        c_grades=opts["c_grades"],
        k_clusters=opts["k"],
        kmeans_restarts=opts["restarts"],
        outcome=opts["outcome"],
        seed=opts["seed"],
    )
    rows = load_student_csv(opts["csv"])
    u = build_unobservables(rows, cfg)
    dist = kmeans_types(rows, u, cfg)
    dist.to_json(w.out / opts["dist_out"])
    doc = {"rows": len(rows), "types": dist.n_types, "probs": dist.probs.tolist(), "regime": dist.regime().value}
    if opts["check_roundtrip"]:
        from .agent import AgentType, CostSpec, NoiseModel

        noise = NoiseModel(cfg.sigma)
        worst = 0.0
        for r, z, g in zip(rows, u.Z, u.G):
            x = best_response(AgentType(z, CostSpec(g)), cfg.beta(), cfg.s_bar, noise, strict=False)
            worst = max(worst, float(np.max(np.abs(x - r.x_star))))
        doc["roundtrip_max_abs_err"] = worst
    w.json("ingest.json", doc)
    return doc


COMMANDS = {
    "eq-solve": cmd_eq_solve,
    "simulate": cmd_simulate,
    "learn": cmd_learn,
    "grad-check": cmd_grad_check,
    "ingest": cmd_ingest,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="capstrat", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of option values")
        sp.add_argument("--dist", help="toy | high_dim | path to distribution JSON")
        sp.add_argument("--dist-seed", type=int, help="seed for the built-in scenario generators")
        sp.add_argument("--q", type=float, help="capacity quantile")
        sp.add_argument("--beta", help="comma-separated criterion (normalized)")
        sp.add_argument("--theta", type=float, help="polar angle of the criterion (d = 2)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="RNG seed (required for experiment commands)")
        sp.add_argument("--reproducible", action="store_true", default=None, help="omit timestamp lines")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("eq-solve", help="mean-field equilibrium threshold")
    common(sp)
    sp.add_argument("--s0", type=float)
    sp.add_argument("--sweep-beta", action="store_true", default=None, help="V_eq over theta (d = 2)")
    sp.add_argument("--n-grid", type=int)

    sp = sub.add_parser("simulate", help="finite-population threshold dynamics")
    common(sp)
    sp.add_argument("--n", help="population size(s), comma-separated")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--b-beta", type=float)
    sp.add_argument("--b-s", type=float)
    sp.add_argument("--s0", type=float)
    sp.add_argument("--record", action="store_true", default=None, help="also dump one perturbed round")

    sp = sub.add_parser("learn", help="learn a criterion")
    common(sp)
    sp.add_argument("--method", choices=["competition", "strategy", "capacity", "all"])
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--n", type=int)
    sp.add_argument("--b-beta", type=float)
    sp.add_argument("--b-s", type=float)
    sp.add_argument("--equilibrate-steps", type=int)
    sp.add_argument("--init", help="'random' or comma-separated initial criterion")
    sp.add_argument("--n-rct", type=int)
    sp.add_argument("--rct-noisy", action="store_true", default=None, help="regress on Z + eps in the RCT")

    sp = sub.add_parser("grad-check", help="gradient estimates against the analytic oracle")
    common(sp)
    sp.add_argument("--n", help="sample sizes, comma-separated")
    sp.add_argument("--b-beta", help="criterion perturbation sizes, comma-separated")
    sp.add_argument("--b-s", type=float)
    sp.add_argument("--reps", type=int)
    sp.add_argument("--warmup", type=int)

    sp = sub.add_parser("ingest", help="build a type distribution from a student CSV")
    common(sp)
    sp.add_argument("--csv")
    sp.add_argument("--k", type=int)
    sp.add_argument("--outcome", choices=["attend", "test_mean", "ses_inverse"])
    sp.add_argument("--s-bar", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--g-test", type=float)
    sp.add_argument("--c-grades", type=float)
    sp.add_argument("--restarts", type=int)
    sp.add_argument("--check-roundtrip", action="store_true", default=None)
    sp.add_argument("--dist-out")
    return p


def resolve_options(args: argparse.Namespace) -> dict:
    """Defaults, then config file, then explicit flags."""
    opts = dict(DEFAULTS["common"], **DEFAULTS[args.command], seed=None, reproducible=False)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise InvalidInputError(f"config file {path} not found")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise InvalidInputError(f"{path}: config must be a JSON object")
        for key, val in doc.items():
            key = key.replace("-", "_")
            if key not in opts:
                raise InvalidInputError(f"{path}: unknown option {key!r}")
            opts[key] = val
    for key, val in vars(args).items():
        if key in ("command", "config", "verbose") or val is None:
            continue
        opts[key] = val
    if args.command in EXPERIMENT_COMMANDS and opts["seed"] is None:
        raise InvalidInputError(f"{args.command} requires --seed (or 'seed' in the config)")
    return opts


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        opts = resolve_options(args)
        w = Writer(Path(opts["out"]), bool(opts["reproducible"]))
        doc = COMMANDS[args.command](opts, w)
    except (InvalidInputError, RegimeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NonConvergenceError, IllConditionedError, DegenerateStepError, RankError, CapstratError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(doc, indent=2, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
