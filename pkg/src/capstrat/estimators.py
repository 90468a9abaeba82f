"""Gradient estimates from a single randomized round.

Regressing outcomes and above-threshold indicators on the Rademacher signs
recovers the partial derivatives of the policy value and of the complementary
score CDF; together with a box-kernel density estimate at the round threshold
these assemble the model, equilibrium and policy gradients.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import IllConditionedError, InvalidInputError, RankError
from .finite import ExperimentRecord
from .population import tangent_project


def ols_rademacher(design, response, b: float) -> np.ndarray:
    """``b^-1 (Z^T Z / n)^-1 (Z^T y / n)`` for a +-1 design ``Z`` (no intercept)."""
    Z = np.asarray(design, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    y = np.asarray(response, dtype=float).reshape(-1)
    n, k = Z.shape
    if y.size != n:
        raise InvalidInputError("design and response lengths differ")
    if b <= 0:
        raise InvalidInputError("perturbation size b must be positive")
    if n < k:
        raise RankError(f"need at least {k} rows, got {n}")
    gram = Z.T @ Z / n
    if np.linalg.matrix_rank(gram) < k:
        raise RankError("Rademacher design is rank deficient")
    return np.linalg.solve(gram, Z.T @ y / n) / b


def kde_box(scores, at: float, h: float) -> float:
    """Box-kernel density ``(n h)^-1 sum 1[(at - s_i)/h in [-1/2, 1/2))``."""
    scores = np.asarray(scores, dtype=float).reshape(-1)
    if scores.size == 0:
        raise InvalidInputError("kde_box needs at least one score")
    if h <= 0:
        raise InvalidInputError("bandwidth must be positive")
    u = (at - scores) / h
    return float(np.count_nonzero((u >= -0.5) & (u < 0.5)) / (scores.size * h))


def default_bandwidth(scores) -> float:
    scores = np.asarray(scores, dtype=float)
    return 1.06 * float(np.std(scores)) * scores.size ** (-1.0 / 3.0)


def model_gradient(record: ExperimentRecord, b_beta: float) -> np.ndarray:
    return ols_rademacher(record.zeta, record.y, b_beta)


@dataclass
class _EqPieces:
    gamma_y_s: float
    gamma_pi_beta: np.ndarray
    gamma_pi_s: float
    density_hat: float
    bandwidth: float

    @property
    def denominator(self) -> float:
        return self.density_hat - self.gamma_pi_s

    @property
    def ds_dbeta(self) -> np.ndarray:
        return self.gamma_pi_beta / self.denominator


def _eq_pieces(record: ExperimentRecord, b_beta, b_s, h) -> _EqPieces:
    h = default_bandwidth(record.score) if h is None else h
    return _EqPieces(
        gamma_y_s=float(ols_rademacher(record.xi, record.y, b_s)[0]),
        gamma_pi_beta=ols_rademacher(record.zeta, record.i_ind, b_beta),
        gamma_pi_s=float(ols_rademacher(record.xi, record.i_ind, b_s)[0]),
        density_hat=kde_box(record.score, record.r_realized, h),
        bandwidth=h,
    )


def _guard(p: _EqPieces) -> None:
    if abs(p.denominator) < max(1e-8, 0.01 * abs(p.density_hat)):
        raise IllConditionedError(
            "density minus threshold slope is numerically zero",
            {"density_hat": p.density_hat, "gamma_pi_s": p.gamma_pi_s},
        )


def equilibrium_gradient(record: ExperimentRecord, b_beta, b_s, h=None) -> np.ndarray:
    p = _eq_pieces(record, b_beta, b_s, h)
    _guard(p)
    return p.gamma_y_s * p.ds_dbeta


def threshold_gradient_estimate(record: ExperimentRecord, b_beta, b_s, h=None) -> np.ndarray:
    """Regression estimate of ``d s / d beta`` (the bracketed factor of the EG)."""
    p = _eq_pieces(record, b_beta, b_s, h)
    _guard(p)
    return p.ds_dbeta


@dataclass
class GradientReport:
    model_grad: np.ndarray
    eq_grad: np.ndarray
    policy_grad: np.ndarray
    gamma_y_beta: np.ndarray
    gamma_y_s: float
    gamma_pi_beta: np.ndarray
    gamma_pi_s: float
    density_hat: float
    bandwidth: float
    degenerate: bool = False

    def tangent(self, beta) -> dict:
        return {
            "model_grad": tangent_project(beta, self.model_grad),
            "eq_grad": tangent_project(beta, self.eq_grad),
            "policy_grad": tangent_project(beta, self.policy_grad),
        }

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def policy_gradient(record: ExperimentRecord, b_beta, b_s, h=None, guard: bool = True) -> GradientReport:
    """Model + equilibrium gradient from one round.

    With ``guard`` an ill-conditioned denominator raises; otherwise the report
    comes back flagged ``degenerate`` with a zero equilibrium part.
    """
    mg = model_gradient(record, b_beta)
    p = _eq_pieces(record, b_beta, b_s, h)
    degenerate = False
    try:
        _guard(p)
        eg = p.gamma_y_s * p.ds_dbeta
    except IllConditionedError:
        if guard:
            raise
        degenerate = True
        eg = np.zeros_like(mg)
    return GradientReport(
        model_grad=mg,
        eq_grad=eg,
        policy_grad=mg + eg,
        gamma_y_beta=mg,
        gamma_y_s=p.gamma_y_s,
        gamma_pi_beta=p.gamma_pi_beta,
        gamma_pi_s=p.gamma_pi_s,
        density_hat=p.density_hat,
        bandwidth=p.bandwidth,
        degenerate=degenerate,
    )
