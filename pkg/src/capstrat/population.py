"""Mean-field layer over a finite-support type distribution.

Scores of type ``k`` are ``N(omega_k(s; beta), sigma^2)`` so the induced score
law is a Gaussian mixture; everything here is an exact mixture computation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from .agent import (
    AgentType,
    CostSpec,
    CovariateBox,
    NoiseModel,
    NoiseRegime,
    norm_cdf,
    norm_pdf,
    regime_thresholds,
    score_beta_gradient,
    score_params,
    score_slope,
    solve_scores,
)
from .errors import InvalidInputError, NonConvergenceError, RegimeError

QUANTILE_TOL = 1e-12
FPI_TOL = 1e-10
FPI_MAX_ITER = 10_000


@dataclass(frozen=True)
class CapacitySpec:
    """Quantile level ``q``; the top ``1 - q`` fraction is treated."""

    q: float

    def __post_init__(self):
        if not 0.0 < float(self.q) < 1.0:
            raise InvalidInputError("capacity quantile q must lie in (0, 1)")
        object.__setattr__(self, "q", float(self.q))


def _q(q) -> float:
    return q.q if isinstance(q, CapacitySpec) else CapacitySpec(q).q


@dataclass(eq=False)
class TypeDistribution:
    types: list
    probs: np.ndarray
    noise: NoiseModel
    box: CovariateBox | None = None

    def __post_init__(self):
        if not self.types:
            raise InvalidInputError("distribution needs at least one type")
        self.types = list(self.types)
        d = self.types[0].dim
        if any(t.dim != d for t in self.types):
            raise InvalidInputError("all types must share one covariate dimension")
        probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if probs.size != len(self.types):
            raise InvalidInputError("probs length must equal number of types")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidInputError("probs must be nonnegative and sum to 1")
        self.probs = probs
        if not isinstance(self.noise, NoiseModel):
            self.noise = NoiseModel(float(self.noise))
        if self.box is None:
            self.box = CovariateBox.default(d)
        if self.box.dim != d:
            raise InvalidInputError("box dimension does not match types")
        self.Z = np.array([t.z for t in self.types])
        self.G = np.array([t.cost.g for t in self.types])
        self.y0 = np.array([t.y0 for t in self.types])
        self.y1 = np.array([t.y1 for t in self.types])

    @property
    def dim(self) -> int:
        return self.Z.shape[1]

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def sigma(self) -> float:
        return self.noise.sigma

    @property
    def effect(self) -> np.ndarray:
        return self.y1 - self.y0

    @property
    def alpha_star(self) -> float:
        return 2.0 * float(self.G.min())

    def regime(self) -> NoiseRegime:
        lo, hi = regime_thresholds(self.alpha_star)
        var = self.sigma**2
        if var > hi:
            return NoiseRegime.CONTRACTION
        if var > lo:
            return NoiseRegime.CONTINUOUS
        return NoiseRegime.DISCONTINUOUS

    def tag_mask(self, tag: str) -> np.ndarray:
        return np.array([tag in t.tags for t in self.types])

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "types": [
                {
                    "z": t.z.tolist(),
                    "g": t.cost.g.tolist(),
                    "y0": t.y0,
                    "y1": t.y1,
                    "tags": list(t.tags),
                }
                for t in self.types
            ],
            "probs": self.probs.tolist(),
            "sigma": self.sigma,
            "box": {"lo": self.box.lo.tolist(), "hi": self.box.hi.tolist()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TypeDistribution":
        try:
            types = [
                AgentType(
                    z=t["z"],
                    cost=CostSpec(t["g"]),
                    y0=t.get("y0", 0.0),
                    y1=t.get("y1", 0.0),
                    tags=t.get("tags", ()),
                )
                for t in doc["types"]
            ]
            box = doc.get("box")
            box = CovariateBox(box["lo"], box["hi"]) if box else None
            return cls(types, doc["probs"], NoiseModel(doc["sigma"]), box)
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed distribution document: {exc!r}") from exc

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> "TypeDistribution":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)


def require_uniqueness(dist: TypeDistribution) -> None:
    if dist.regime() is NoiseRegime.DISCONTINUOUS:
        lo, _ = regime_thresholds(dist.alpha_star)
        raise RegimeError(
            f"sigma^2={dist.sigma**2:.6g} <= {lo:.6g}: equilibrium not guaranteed"
        )


# ---------------------------------------------------------------------------
# Score distribution
# ---------------------------------------------------------------------------


def type_scores(dist: TypeDistribution, beta, s: float) -> np.ndarray:
    """Expected scores ``omega_k(s; beta)`` for every type."""
    a, c = score_params(dist.Z, dist.G, beta)
    return solve_scores(a, c, s, dist.sigma)


def score_cdf(dist, beta, s, r, omega=None):
    omega = type_scores(dist, beta, s) if omega is None else omega
    r = np.asarray(r, dtype=float)
    val = norm_cdf(r[..., None] - omega, dist.sigma) @ dist.probs
    return float(val) if val.ndim == 0 else val


def score_pdf(dist, beta, s, r, omega=None):
    omega = type_scores(dist, beta, s) if omega is None else omega
    r = np.asarray(r, dtype=float)
    val = norm_pdf(r[..., None] - omega, dist.sigma) @ dist.probs
    return float(val) if val.ndim == 0 else val


def _mixture_quantile(omega, probs, sigma, q) -> float:
    lo = float(omega.min()) - 10 * sigma
    hi = float(omega.max()) + 10 * sigma

    def cdf(r):
        return float(norm_cdf(r - omega, sigma) @ probs)

    for _ in range(60):
        if cdf(lo) <= q:
            break
        lo -= 10 * sigma
    for _ in range(60):
        if cdf(hi) >= q:
            break
        hi += 10 * sigma
    if not cdf(lo) <= q <= cdf(hi):
        raise RuntimeError("quantile bracket expansion failed")
    while hi - lo > QUANTILE_TOL * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if cdf(mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def quantile(dist, beta, s, q, omega=None) -> float:
    """``q``-quantile of the score law induced by ``(beta, s)`` (bisection)."""
    omega = type_scores(dist, beta, s) if omega is None else omega
    return _mixture_quantile(omega, dist.probs, dist.sigma, _q(q))


def raw_score_quantile(dist, beta, q) -> float:
    """Quantile of ``beta^T (Z + eps)``, the non-strategic score law."""
    omega = np.asarray(dist.Z @ np.asarray(beta, dtype=float))
    return _mixture_quantile(omega, dist.probs, dist.sigma, _q(q))


# ---------------------------------------------------------------------------
# Equilibrium
# ---------------------------------------------------------------------------


@dataclass
class EquilibriumResult:
    s_star: float
    iterations: int
    residual: float
    kappa_hat: float
    trace: list = field(default_factory=list, repr=False)


def meanfield_fixed_point(
    dist: TypeDistribution,
    beta,
    q,
    s0: float = 0.0,
    tol: float = FPI_TOL,
    max_iter: int = FPI_MAX_ITER,
) -> EquilibriumResult:
    """Iterate ``s <- quantile(beta, s)`` until successive iterates agree to ``tol``."""
    require_uniqueness(dist)
    q = _q(q)
    trace = [float(s0)]
    s = float(s0)
    kappa = 0.0
    prev_step = None
    for it in range(1, max_iter + 1):
        s_new = quantile(dist, beta, s, q)
        step = abs(s_new - s)
        if prev_step is not None and prev_step > 1e3 * QUANTILE_TOL and step > 1e3 * QUANTILE_TOL:
            kappa = max(kappa, step / prev_step)
        trace.append(s_new)
        s, prev_step = s_new, step
        if step <= tol:
            residual = abs(s - quantile(dist, beta, s, q))
            if residual <= 10 * tol:
                return EquilibriumResult(s, it, residual, kappa, trace)
    raise NonConvergenceError(
        f"fixed-point iteration did not converge in {max_iter} steps", trace
    )


def equilibrium_threshold(dist, beta, q, s0: float = 0.0, tol: float = FPI_TOL) -> float:
    """Equilibrium threshold; falls back to bracketing ``s - quantile(s)`` if the
    plain iteration stalls (uniqueness still holds without contraction)."""
    try:
        return meanfield_fixed_point(dist, beta, q, s0, tol, max_iter=2000).s_star
    except NonConvergenceError:
        pass
    q = _q(q)

    def h(s):
        return s - quantile(dist, beta, s, q)

    lo, hi = raw_score_quantile(dist, beta, q) - 1.0, raw_score_quantile(dist, beta, q) + 1.0
    while h(lo) > 0:
        lo -= 2 * (hi - lo)
    while h(hi) < 0:
        hi += 2 * (hi - lo)
    return brentq(h, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps)


# ---------------------------------------------------------------------------
# Policy value and derivatives
# ---------------------------------------------------------------------------


def policy_value(dist, beta, s, r) -> float:
    """Mean outcome when agents respond to ``(beta, s)`` and the cut-off is ``r``."""
    omega = type_scores(dist, beta, s)
    treated = 1.0 - norm_cdf(r - omega, dist.sigma)
    return float(dist.probs @ (dist.y0 + dist.effect * treated))


def equilibrium_policy_value(dist, beta, q) -> float:
    s_star = equilibrium_threshold(dist, beta, q)
    return policy_value(dist, beta, s_star, s_star)


class Partials(NamedTuple):
    """Analytic partial derivatives at ``(beta, s, r)``."""

    dv_dbeta: np.ndarray
    dv_ds: float
    dv_dr: float
    dpi_dbeta: np.ndarray
    dpi_ds: float
    density: float


def partials(dist, beta, s, r) -> Partials:
    beta = np.asarray(beta, dtype=float)
    sigma = dist.sigma
    a, c = score_params(dist.Z, dist.G, beta)
    omega = solve_scores(a, c, s, sigma)
    dw_ds = score_slope(omega, c, s, sigma)
    dw_db = score_beta_gradient(omega, dist.Z, dist.G, beta, c, s, sigma)
    w = dist.probs * norm_pdf(r - omega, sigma)
    we = w * dist.effect
    return Partials(
        dv_dbeta=we @ dw_db,
        dv_ds=float(we @ dw_ds),
        dv_dr=float(-we.sum()),
        dpi_dbeta=w @ dw_db,
        dpi_ds=float(w @ dw_ds),
        density=float(w.sum()),
    )


def tangent_project(beta, v) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    v = np.asarray(v, dtype=float)
    return v - (beta @ v) * beta


class ThresholdGradient(NamedTuple):
    raw: np.ndarray
    tangent: np.ndarray


def threshold_gradient(dist, beta, q, s_star: float | None = None) -> ThresholdGradient:
    """``d s(beta) / d beta`` from implicit differentiation of the fixed point."""
    require_uniqueness(dist)
    s_star = equilibrium_threshold(dist, beta, q) if s_star is None else s_star
    p = partials(dist, beta, s_star, s_star)
    raw = p.dpi_dbeta / (p.density - p.dpi_ds)
    return ThresholdGradient(raw, tangent_project(beta, raw))


class GradientOracle(NamedTuple):
    """Analytic model / equilibrium / policy gradients at the equilibrium."""

    s_star: float
    model: np.ndarray
    equilibrium: np.ndarray
    policy: np.ndarray
    ds_dbeta: np.ndarray
    dv_dsr: float


def gradient_oracle(dist, beta, q, s_star: float | None = None) -> GradientOracle:
    s_star = equilibrium_threshold(dist, beta, q) if s_star is None else s_star
    p = partials(dist, beta, s_star, s_star)
    ds_db = p.dpi_dbeta / (p.density - p.dpi_ds)
    dv_dsr = p.dv_ds + p.dv_dr
    eq = dv_dsr * ds_db
    return GradientOracle(s_star, p.dv_dbeta, eq, p.dv_dbeta + eq, ds_db, dv_dsr)


def natural_share_above(dist, beta, q, group_mask: Sequence[bool]) -> float:
    """Share of above-threshold mass at equilibrium that belongs to ``group_mask``."""
    mask = np.asarray(group_mask, dtype=bool)
    if mask.size != dist.n_types:
        raise InvalidInputError("group mask length must equal number of types")
    s_star = equilibrium_threshold(dist, beta, q)
    omega = type_scores(dist, beta, s_star)
    above = dist.probs * (1.0 - norm_cdf(s_star - omega, dist.sigma))
    return float(above[mask].sum() / above.sum())


def polar_beta(theta: float) -> np.ndarray:
    return np.array([math.cos(theta), math.sin(theta)])


def optimal_beta_2d(dist, q, n_grid: int = 721) -> tuple[float, np.ndarray, float]:
    """Grid-then-golden search over the circle; returns ``(theta, beta, V_eq)``."""
    from scipy.optimize import minimize_scalar

    thetas = np.linspace(-math.pi, math.pi, n_grid, endpoint=False)
    vals = np.array([equilibrium_policy_value(dist, polar_beta(t), q) for t in thetas])
    i = int(np.argmax(vals))
    step = thetas[1] - thetas[0]
    res = minimize_scalar(
        lambda t: -equilibrium_policy_value(dist, polar_beta(t), q),
        bounds=(thetas[i] - step, thetas[i] + step),
        method="bounded",
        options={"xatol": 1e-9},
    )
    theta = float(res.x)
    return theta, polar_beta(theta), -float(res.fun)
