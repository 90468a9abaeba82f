"""Finite-population dynamics: sampling, empirical thresholds, perturbed rounds.

Every step draws ``n`` fresh agents.  Best responses depend only on the type and
on the perturbation signs, so they are solved once per distinct combination and
gathered, which keeps a step at O(n) numpy work regardless of ``n``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .agent import reconstruct_x, score_params, solve_scores
from .errors import InvalidInputError
from .population import CapacitySpec, TypeDistribution, _q, equilibrium_threshold, raw_score_quantile

MAX_COMBO_TABLE = 1 << 16


@dataclass
class SimConfig:
    n: int
    q: float = 0.7
    b_beta: float = 0.0
    b_s: float = 0.0
    trunc_d: float | None = None
    seed: int = 0
    outcome_noise: float = 0.0
    check_truncation: bool = True

    def __post_init__(self):
        if int(self.n) < 1:
            raise InvalidInputError("n must be at least 1")
        self.n = int(self.n)
        self.q = _q(self.q)
        if self.b_beta < 0 or self.b_s < 0:
            raise InvalidInputError("perturbation sizes must be nonnegative")
        if self.trunc_d is not None and self.trunc_d <= 0:
            raise InvalidInputError("trunc_d must be positive")
        if self.outcome_noise < 0:
            raise InvalidInputError("outcome_noise must be nonnegative")

    @property
    def perturbed(self) -> bool:
        return self.b_beta > 0 or self.b_s > 0


def default_truncation(dist: TypeDistribution, q, n_dirs: int = 64) -> float:
    """``10 +`` the largest |raw-score quantile| over a coarse set of directions."""
    d = dist.dim
    rng = np.random.default_rng(12345)
    dirs = rng.standard_normal((n_dirs, d))
    dirs = np.vstack([dirs, np.eye(d), -np.eye(d)])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return 10.0 + max(abs(raw_score_quantile(dist, b, q)) for b in dirs)


def resolve_truncation(dist, beta, cfg: SimConfig) -> float:
    D = cfg.trunc_d if cfg.trunc_d is not None else default_truncation(dist, cfg.q)
    if cfg.check_truncation:
        s_star = equilibrium_threshold(dist, beta, cfg.q)
        if not -D <= s_star <= D:
            raise InvalidInputError(f"equilibrium threshold {s_star:.4g} outside [-{D}, {D}]")
    return D


# ---------------------------------------------------------------------------
# Sampling and quantiles
# ---------------------------------------------------------------------------


class AgentSample(NamedTuple):
    type_idx: np.ndarray
    eps: np.ndarray


def sample_agents(dist: TypeDistribution, n: int, rng: np.random.Generator) -> AgentSample:
    """``n`` i.i.d. type indices and Gaussian reporting noises."""
    idx = rng.choice(dist.n_types, size=n, p=dist.probs)
    eps = rng.normal(0.0, dist.sigma, size=(n, dist.dim))
    return AgentSample(idx, eps)


def empirical_quantile(scores, q) -> float:
    """The ``ceil(q n)``-th smallest score (1-indexed)."""
    scores = np.asarray(scores, dtype=float).reshape(-1)
    if scores.size == 0:
        raise InvalidInputError("empirical_quantile needs at least one score")
    q = _q(q)
    k = max(1, math.ceil(q * scores.size)) - 1
    return float(np.partition(scores, k)[k])


# ---------------------------------------------------------------------------
# Perturbation bookkeeping
# ---------------------------------------------------------------------------


def _sign_table(d: int) -> np.ndarray:
    """Row ``code`` holds the +-1 vector whose bit j is set iff entry j is +1."""
    codes = np.arange(1 << d)
    bits = (codes[:, None] >> np.arange(d)) & 1
    return (2 * bits - 1).astype(np.int8)


class _Responder:
    """Expected scores for (type, zeta, xi) combos at a fixed (beta, b, s)."""

    def __init__(self, dist: TypeDistribution, beta, b_beta: float, b_s: float):
        self.dist = dist
        self.beta = np.asarray(beta, dtype=float)
        self.b_beta = b_beta
        self.b_s = b_s
        d = dist.dim
        self.tabulate = b_beta == 0 or (dist.n_types << d) <= MAX_COMBO_TABLE
        if b_beta > 0 and self.tabulate:
            self.signs = _sign_table(d)
            betas = self.beta + b_beta * self.signs  # (2^d, d)
            self.a, self.c = score_params(dist.Z[:, None, :], dist.G[:, None, :], betas[None])
            self.norms = np.linalg.norm(betas, axis=1)
        elif b_beta == 0:
            self.a, self.c = score_params(dist.Z, dist.G, self.beta)

    def draw(self, n, rng):
        """Draw type indices and perturbation signs for ``n`` agents."""
        idx = rng.choice(self.dist.n_types, size=n, p=self.dist.probs)
        code = rng.integers(0, 1 << self.dist.dim, size=n) if self.b_beta > 0 else None
        xi = (2 * rng.integers(0, 2, size=n) - 1).astype(np.int8) if self.b_s > 0 else None
        return idx, code, xi

    def scores(self, s, idx, code, xi):
        """Expected scores ``beta_i^T x*_i`` and per-agent ``|beta_i|``."""
        sig = self.dist.sigma
        s_i = s if xi is None else s + self.b_s * np.array([-1.0, 1.0])
        if self.b_beta == 0:
            table = solve_scores(self.a[:, None], self.c[:, None], np.atleast_1d(s_i)[None], sig)
            col = 0 if xi is None else (xi > 0).astype(int)
            return table[idx, col], np.ones(idx.size)
        if self.tabulate:
            s_col = np.atleast_1d(s_i)
            table = solve_scores(self.a[..., None], self.c[..., None], s_col, sig)
            col = 0 if xi is None else (xi > 0).astype(int)
            return table[idx, code, col], self.norms[code]
        zeta = _sign_table_rows(code, self.dist.dim)
        betas = self.beta + self.b_beta * zeta
        a, c = score_params(self.dist.Z[idx], self.dist.G[idx], betas)
        s_vec = s if xi is None else s + self.b_s * xi
        return solve_scores(a, c, s_vec, sig), np.linalg.norm(betas, axis=1)


def _sign_table_rows(code, d):
    bits = (np.asarray(code)[:, None] >> np.arange(d)) & 1
    return (2 * bits - 1).astype(np.int8)


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


def stochastic_fpi(
    dist: TypeDistribution,
    beta,
    cfg: SimConfig,
    s0: float,
    t_steps: int,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Thresholds ``S^1 .. S^t`` of the finite-population quantile iteration.

    Each step samples fresh agents who respond to the previous threshold
    (perturbed per agent when ``b > 0``); the next threshold is the empirical
    ``q``-quantile of the perturbed scores, clamped to ``[-D, D]``.
    Only scores are needed here, so ``beta_i^T eps_i`` is drawn directly as
    ``N(0, sigma^2 |beta_i|^2)``.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    D = resolve_truncation(dist, beta, cfg)
    resp = _Responder(dist, beta, cfg.b_beta, cfg.b_s)
    trace = np.empty(t_steps)
    s = float(s0)
    for t in range(t_steps):
        idx, code, xi = resp.draw(cfg.n, rng)
        m, norms = resp.scores(s, idx, code, xi)
        scores = m + dist.sigma * norms * rng.standard_normal(cfg.n)
        if xi is not None:
            scores -= cfg.b_s * xi
        s = min(max(empirical_quantile(scores, cfg.q), -D), D)
        trace[t] = s
    return trace


@dataclass
class ExperimentRecord:
    type_idx: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray
    x: np.ndarray
    score: np.ndarray
    w: np.ndarray
    y: np.ndarray
    i_ind: np.ndarray
    s_prev: float
    r_realized: float
    b_beta: float
    b_s: float
    q: float

    @property
    def n(self) -> int:
        return self.score.size

    def raw_scores(self, beta) -> np.ndarray:
        """``beta_i^T X_i`` without the threshold shock."""
        return self.score + self.b_s * self.xi

    def to_csv(self, path) -> None:
        d = self.x.shape[1]
        header = (
            ["agent_idx"]
            + [f"zeta_{j + 1}" for j in range(d)]
            + ["xi"]
            + [f"x_{j + 1}" for j in range(d)]
            + ["score", "w", "y", "i_ind"]
        )
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for i in range(self.n):
                wr.writerow(
                    [i]
                    + [int(v) for v in self.zeta[i]]
                    + [int(self.xi[i])]
                    + [_fmt(v) for v in self.x[i]]
                    + [_fmt(self.score[i]), int(self.w[i]), _fmt(self.y[i]), int(self.i_ind[i])]
                )
        sidecar = {
            "n": self.n,
            "s_prev": self.s_prev,
            "r_realized": self.r_realized,
            "b_beta": self.b_beta,
            "b_s": self.b_s,
            "q": self.q,
        }
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))


def _fmt(v) -> str:
    return format(float(v), ".17g")


def run_perturbed_round(
    dist: TypeDistribution,
    beta,
    cfg: SimConfig,
    s_prev: float,
    rng: np.random.Generator,
) -> ExperimentRecord:
    """One unit-level randomized round around the threshold ``s_prev``.

    Agent ``i`` best responds to ``(beta + b zeta_i, s_prev + b xi_i)`` and is
    scored by ``beta_i^T X_i - b xi_i``; the round threshold ``r`` is the
    empirical quantile of those scores and ``W_i = 1[beta_i^T X_i > r + b xi_i]``.
    """
    beta = np.asarray(beta, dtype=float)
    n, d = cfg.n, dist.dim
    resp = _Responder(dist, beta, cfg.b_beta, cfg.b_s)
    idx, code, xi = resp.draw(n, rng)
    m, _ = resp.scores(s_prev, idx, code, xi)
    zeta = _sign_table_rows(code, d) if code is not None else np.zeros((n, d), dtype=np.int8)
    xi = xi if xi is not None else np.zeros(n, dtype=np.int8)
    betas = beta + cfg.b_beta * zeta
    s_i = s_prev + cfg.b_s * xi
    x_star = reconstruct_x(m, dist.Z[idx], dist.G[idx], betas, s_i, dist.sigma)
    eps = rng.normal(0.0, dist.sigma, size=(n, d))
    x = x_star + eps
    raw = np.einsum("ij,ij->i", betas, x)
    score = raw - cfg.b_s * xi
    r = empirical_quantile(score, cfg.q)
    w = (raw > r + cfg.b_s * xi).astype(np.int8)
    i_ind = (raw > r).astype(np.int8)
    y = np.where(w == 1, dist.y1[idx], dist.y0[idx])
    if cfg.outcome_noise > 0:
        y = y + rng.normal(0.0, cfg.outcome_noise, size=n)
    return ExperimentRecord(
        type_idx=idx,
        zeta=zeta,
        xi=xi,
        x=x,
        score=score,
        w=w,
        y=y.astype(float),
        i_ind=i_ind,
        s_prev=float(s_prev),
        r_realized=r,
        b_beta=cfg.b_beta,
        b_s=cfg.b_s,
        q=cfg.q,
    )


def threshold_trace_csv(path, traces: dict, s_star: float | None = None) -> None:
    """Write ``{label: trace}`` as long-format CSV (label, t, threshold)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["label", "t", "threshold"])
        for label, tr in traces.items():
            for t, v in enumerate(tr, start=1):
                wr.writerow([label, t, _fmt(v)])
        if s_star is not None:
            wr.writerow(["meanfield", 0, _fmt(s_star)])
