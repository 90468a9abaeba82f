"""Projected gradient ascent on the unit sphere, plus the RCT baseline.

Each epoch lets the threshold settle under the finite-population dynamics,
runs one perturbed round at that threshold, and steps ``beta`` along the
estimated gradient before renormalizing.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateStepError, InvalidInputError, RankError
from .estimators import GradientReport, policy_gradient
from .finite import SimConfig, _fmt, default_truncation, run_perturbed_round, stochastic_fpi
from .population import TypeDistribution, _q, equilibrium_policy_value, raw_score_quantile

PROJ_EPS = 1e-12


class Method(str, enum.Enum):
    COMPETITION = "competition"
    STRATEGY = "strategy"


def project_sphere(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if not np.isfinite(norm) or norm < PROJ_EPS:
        raise DegenerateStepError(f"cannot project vector of norm {norm:.3g}")
    return v / norm


@dataclass
class LearnConfig:
    epochs: int
    lr: float
    sim: SimConfig
    equilibrate_steps: int = 50
    method: Method = Method.COMPETITION
    init_beta: np.ndarray | str | None = None  # None or "random" -> random direction
    oracle: bool = True

    def __post_init__(self):
        if int(self.epochs) < 0:
            raise InvalidInputError("epochs must be nonnegative")
        if self.lr < 0:
            raise InvalidInputError("learning rate must be nonnegative")
        if self.equilibrate_steps < 1:
            raise InvalidInputError("equilibrate_steps must be at least 1")
        self.epochs = int(self.epochs)
        self.method = Method(self.method)
        if self.sim.b_beta <= 0 or self.sim.b_s <= 0:
            raise InvalidInputError("learning needs positive perturbation sizes")


@dataclass
class EpochRecord:
    epoch: int
    beta: np.ndarray
    s: float
    report: GradientReport | None
    v_hat: float
    v_eq: float
    skipped: bool = False


@dataclass
class LearnTrace:
    method: Method
    epochs: list = field(default_factory=list)
    final_beta: np.ndarray | None = None
    final_v_eq: float = float("nan")

    @property
    def betas(self) -> np.ndarray:
        return np.array([e.beta for e in self.epochs] + [self.final_beta])

    def to_csv(self, path) -> None:
        d = self.final_beta.size
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(
                ["epoch"]
                + [f"beta_{j + 1}" for j in range(d)]
                + ["s", "v_hat", "v_eq", "mg_norm", "eg_norm", "pg_norm", "skipped"]
            )
            for e in self.epochs:
                norms = ["", "", ""]
                if e.report is not None:
                    t = e.report.tangent(e.beta)
                    norms = [_fmt(np.linalg.norm(t[k])) for k in ("model_grad", "eq_grad", "policy_grad")]
                wr.writerow(
                    [e.epoch]
                    + [_fmt(b) for b in e.beta]
                    + [_fmt(e.s), _fmt(e.v_hat), _fmt(e.v_eq)]
                    + norms
                    + [int(e.skipped)]
                )

    def summary(self) -> dict:
        return {
            "method": self.method.value,
            "epochs": len(self.epochs),
            "final_beta": self.final_beta.tolist(),
            "final_v_eq": self.final_v_eq,
        }


def _initial_beta(init, d, rng) -> np.ndarray:
    if init is None or (isinstance(init, str) and init.lower() == "random"):
        return project_sphere(rng.standard_normal(d))
    beta = np.asarray(init, dtype=float)
    if beta.shape != (d,):
        raise InvalidInputError(f"init_beta must have length {d}")
    return project_sphere(beta)


def learn(dist: TypeDistribution, cfg: LearnConfig, q, rng: np.random.Generator) -> LearnTrace:
    """Run the ascent loop; returns per-epoch iterates and the final criterion.

    A round whose threshold-slope denominator is degenerate reuses the last
    good equilibrium-gradient term; with none available the update is skipped.
    """
    q = _q(q)
    beta = _initial_beta(cfg.init_beta, dist.dim, rng)
    D = cfg.sim.trunc_d if cfg.sim.trunc_d is not None else default_truncation(dist, q)
    sim = replace(cfg.sim, q=q, trunc_d=D, check_truncation=False)
    s = raw_score_quantile(dist, beta, q)
    trace = LearnTrace(cfg.method)
    last_eq = None

    def v_oracle(b):
        return equilibrium_policy_value(dist, b, q) if cfg.oracle else float("nan")

    for j in range(cfg.epochs):
        s = float(stochastic_fpi(dist, beta, sim, s, cfg.equilibrate_steps, rng)[-1])
        rec = run_perturbed_round(dist, beta, sim, s, rng)
        report = policy_gradient(rec, sim.b_beta, sim.b_s, guard=False)
        skipped = False
        if cfg.method is Method.STRATEGY:
            grad = report.model_grad
        elif not report.degenerate:
            grad = report.policy_grad
            last_eq = report.eq_grad
        elif last_eq is not None:
            grad = report.model_grad + last_eq
        else:
            grad = None
        trace.epochs.append(EpochRecord(j, beta.copy(), s, report, float(rec.y.mean()), v_oracle(beta)))
        if grad is not None:
            try:
                beta = project_sphere(beta + cfg.lr * grad)
            except DegenerateStepError:
                skipped = True
        else:
            skipped = True
        trace.epochs[-1].skipped = skipped
    trace.final_beta = beta
    trace.final_v_eq = v_oracle(beta)
    return trace


# ---------------------------------------------------------------------------
# Capacity-aware baseline
# ---------------------------------------------------------------------------


def _ols_with_intercept(X, y) -> np.ndarray:
    A = np.column_stack([np.ones(len(X)), X])
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise RankError("RCT design is rank deficient (too few distinct types; try noisy covariates)")
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef


def capacity_aware_baseline(
    dist: TypeDistribution,
    n_rct: int,
    q,
    rng: np.random.Generator,
    noisy_covariates: bool = False,
) -> np.ndarray:
    """Projected CATE slope from a non-strategic randomized trial.

    Treatment is Bernoulli(1/2).  By default the regressors are the raw
    covariates ``Z``; ``noisy_covariates`` regresses on ``Z + eps`` instead.
    """
    _q(q)
    d = dist.dim
    if n_rct < 10 * d:
        raise InvalidInputError(f"n_rct must be at least {10 * d}")
    if np.all(dist.effect == 0):
        raise DegenerateStepError("treatment has no effect on any type; CATE slope is zero")
    idx = rng.choice(dist.n_types, size=n_rct, p=dist.probs)
    X = dist.Z[idx]
    if noisy_covariates:
        X = X + rng.normal(0.0, dist.sigma, size=X.shape)
    treat = rng.integers(0, 2, size=n_rct).astype(bool)
    y = np.where(treat, dist.y1[idx], dist.y0[idx])
    if treat.sum() <= d or (~treat).sum() <= d:
        raise RankError("one RCT arm has too few units")
    slope = _ols_with_intercept(X[treat], y[treat])[1:] - _ols_with_intercept(X[~treat], y[~treat])[1:]
    return project_sphere(slope)


def trace_json(trace: LearnTrace) -> str:
    return json.dumps(trace.summary(), indent=2)
