"""Agent-level model: expected utility, best response and expected score.

Agents carry a quadratic modification cost ``(x - z)^T Diag(g) (x - z)`` and
report ``x* + eps`` with isotropic Gaussian noise ``eps ~ N(0, sigma^2 I)``.
For this cost the first-order condition collapses to a scalar equation in the
expected score ``m = beta^T x*``::

    m = beta^T z + c * phi_sigma(s - m),    c = 1/2 * beta^T Diag(g)^{-1} beta

after which ``x* = z + 1/2 * phi_sigma(s - m) * Diag(g)^{-1} beta``.  All heavy
lifting goes through :func:`solve_scores`, which is vectorised over any number
of (agent, policy) pairs so the population and simulation layers can share it.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import BoundaryWarning, InvalidInputError, RegimeError

SQRT_2PI = math.sqrt(2.0 * math.pi)
SQRT_2PI_E = math.sqrt(2.0 * math.pi * math.e)

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 200
N_ROOT_SCAN = 512
BOX_MARGIN = 1e-9
DEFAULT_BOX_HALF_WIDTH = 100.0


# ---------------------------------------------------------------------------
# Gaussian helpers
# ---------------------------------------------------------------------------


def norm_pdf(x, sigma):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * (x / sigma) ** 2) / (sigma * SQRT_2PI)


def norm_pdf_prime(x, sigma):
    """Derivative of the N(0, sigma^2) density."""
    x = np.asarray(x, dtype=float)
    return -x / sigma**2 * norm_pdf(x, sigma)


def norm_cdf(x, sigma):
    return ndtr(np.asarray(x, dtype=float) / sigma)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


def _vec(values, name) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.size == 0:
        raise InvalidInputError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Diagonal quadratic cost ``(x - z)^T Diag(g) (x - z)``."""

    g: np.ndarray
    kind: str = "quadratic"

    def __post_init__(self):
        object.__setattr__(self, "g", _vec(self.g, "g"))
        if self.kind != "quadratic":
            raise InvalidInputError(f"unsupported cost kind {self.kind!r}")
        if np.any(self.g <= 0):
            raise InvalidInputError("cost weights g must be strictly positive")

    @property
    def dim(self) -> int:
        return self.g.size

    @property
    def alpha(self) -> float:
        """Strong-convexity modulus of the cost."""
        return 2.0 * float(self.g.min())

    def __call__(self, delta) -> float:
        delta = np.asarray(delta, dtype=float)
        return float(delta @ (self.g * delta))


@dataclass(frozen=True, eq=False)
class AgentType:
    z: np.ndarray
    cost: CostSpec
    y0: float = 0.0
    y1: float = 0.0
    tags: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "z", _vec(self.z, "z"))
        if not isinstance(self.cost, CostSpec):
            object.__setattr__(self, "cost", CostSpec(self.cost))
        if self.cost.dim != self.z.size:
            raise InvalidInputError(
                f"z has dimension {self.z.size} but cost has {self.cost.dim}"
            )
        object.__setattr__(self, "y0", float(self.y0))
        object.__setattr__(self, "y1", float(self.y1))
        object.__setattr__(self, "tags", tuple(self.tags))

    @property
    def dim(self) -> int:
        return self.z.size

    @property
    def effect(self) -> float:
        return self.y1 - self.y0


@dataclass(frozen=True, eq=False)
class CovariateBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", _vec(self.lo, "lo"))
        object.__setattr__(self, "hi", _vec(self.hi, "hi"))
        if self.lo.shape != self.hi.shape:
            raise InvalidInputError("box bounds must have equal length")
        if np.any(self.lo >= self.hi):
            raise InvalidInputError("box requires lo < hi componentwise")

    @classmethod
    def default(cls, d: int, half_width: float = DEFAULT_BOX_HALF_WIDTH) -> "CovariateBox":
        return cls(np.full(d, -half_width), np.full(d, half_width))

    @property
    def dim(self) -> int:
        return self.lo.size

    def interior(self, x, margin: float = BOX_MARGIN):
        """Boolean (per row) for strict interior membership."""
        x = np.asarray(x, dtype=float)
        return np.all((x > self.lo + margin) & (x < self.hi - margin), axis=-1)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= self.lo) & (x <= self.hi)))


@dataclass(frozen=True)
class NoiseModel:
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidInputError("sigma must be positive and finite")
        object.__setattr__(self, "sigma", float(self.sigma))

    def pdf(self, x):
        return norm_pdf(x, self.sigma)

    def cdf(self, x):
        return norm_cdf(x, self.sigma)

    def pdf_prime(self, x):
        return norm_pdf_prime(x, self.sigma)


@dataclass(frozen=True, eq=False)
class Policy:
    beta: np.ndarray
    threshold: float = 0.0

    def __post_init__(self):
        beta = _vec(self.beta, "beta")
        if abs(np.linalg.norm(beta) - 1.0) > 1e-12:
            raise InvalidInputError("beta must have unit Euclidean norm")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "threshold", float(self.threshold))


class NoiseRegime(enum.Enum):
    DISCONTINUOUS = "discontinuous"
    CONTINUOUS = "continuous"
    CONTRACTION = "contraction"


def regime_thresholds(alpha: float) -> tuple[float, float]:
    """Variance cut-offs ``(uniqueness, contraction)`` for modulus ``alpha``."""
    if math.isinf(alpha):
        return 0.0, 0.0
    return 1.0 / (alpha * SQRT_2PI_E), 2.0 / (alpha * SQRT_2PI_E)


def noise_regime(cost: CostSpec, noise: NoiseModel) -> NoiseRegime:
    lo, hi = regime_thresholds(cost.alpha)
    var = noise.sigma**2
    if var > hi:
        return NoiseRegime.CONTRACTION
    if var > lo:
        return NoiseRegime.CONTINUOUS
    return NoiseRegime.DISCONTINUOUS


# ---------------------------------------------------------------------------
# Vectorised scalar kernel
# ---------------------------------------------------------------------------


def score_params(z, g, beta):
    """Return ``(a, c)`` with ``a = beta.z`` and ``c = beta^T Diag(g)^-1 beta / 2``.

    Arrays broadcast along leading axes; the last axis is the covariate one.
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(g, dtype=float)
    beta = np.asarray(beta, dtype=float)
    a = np.sum(beta * z, axis=-1)
    c = 0.5 * np.sum(beta * beta / g, axis=-1)
    return a, c


def _gap(m, a, c, s, sigma):
    return m - a - c * norm_pdf(s - m, sigma)


def _scan_roots(a: float, c: float, s: float, sigma: float) -> np.ndarray:
    """All roots of the scalar FOC, located by sign changes on a fine grid."""
    hi = a + c / (sigma * SQRT_2PI)
    grid = np.linspace(a, hi, N_ROOT_SCAN + 1)
    vals = _gap(grid, a, c, s, sigma)
    roots = list(grid[vals == 0.0])
    idx = np.nonzero((vals[:-1] * vals[1:]) < 0)[0]
    for i in idx:
        lo_, hi_ = grid[i], grid[i + 1]
        f_lo = vals[i]
        for _ in range(200):
            mid = 0.5 * (lo_ + hi_)
            f_mid = _gap(mid, a, c, s, sigma)
            if f_mid == 0.0 or hi_ - lo_ <= NEWTON_TOL * max(1.0, abs(mid)):
                break
            if (f_mid < 0) == (f_lo < 0):
                lo_, f_lo = mid, f_mid
            else:
                hi_ = mid
        roots.append(0.5 * (lo_ + hi_))
    return np.sort(np.asarray(roots, dtype=float))


def score_utility(m, c, s, sigma):
    """Expected utility at the FOC point with expected score ``m``."""
    phi = norm_pdf(s - m, sigma)
    return -0.5 * c * phi**2 + 1.0 - norm_cdf(s - m, sigma)


def _select_root(a: float, c: float, s: float, sigma: float) -> float:
    roots = _scan_roots(a, c, s, sigma)
    if roots.size == 0:  # tangency missed by the scan; fall back to endpoints
        roots = np.array([a, a + c / (sigma * SQRT_2PI)])
    util = score_utility(roots, c, s, sigma)
    # ties go to the smallest score; roots are sorted ascending
    return float(roots[int(np.argmax(util))])


def solve_scores(a, c, s, sigma: float) -> np.ndarray:
    """Expected best-response scores ``m`` for broadcast arrays ``a, c, s``.

    Where ``c < sigma^2 sqrt(2 pi e)`` the scalar map is strictly monotone and a
    bracketed Newton iteration is used.  Elsewhere the root set is enumerated
    and the utility-maximising root is kept.
    """
    a, c, s = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(c, dtype=float), np.asarray(s, dtype=float)
    )
    shape = a.shape
    a, c, s = a.ravel(), c.ravel(), s.ravel()
    out = np.empty_like(a)

    unique = c < sigma**2 * SQRT_2PI_E
    if np.any(unique):
        out[unique] = _newton(a[unique], c[unique], s[unique], sigma)
    for i in np.nonzero(~unique)[0]:
        out[i] = _select_root(a[i], c[i], s[i], sigma)
    return out.reshape(shape)


def _newton(a, c, s, sigma):
    lo = a.copy()
    hi = a + c / (sigma * SQRT_2PI)
    m = a.copy()
    active = np.ones(a.shape, dtype=bool)
    for _ in range(NEWTON_MAX_ITER):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        mi, ai, ci, si = m[idx], a[idx], c[idx], s[idx]
        f = mi - ai - ci * norm_pdf(si - mi, sigma)
        below = f < 0
        lo[idx] = np.where(below, mi, lo[idx])
        hi[idx] = np.where(below, hi[idx], mi)
        fp = 1.0 + ci * norm_pdf_prime(si - mi, sigma)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = mi - f / fp
        ok = (fp > 0) & (step >= lo[idx]) & (step <= hi[idx])
        new = np.where(ok, step, 0.5 * (lo[idx] + hi[idx]))
        tol = NEWTON_TOL * np.maximum(1.0, np.abs(new))
        done = (np.abs(new - mi) <= tol) | (f == 0.0) | (hi[idx] - lo[idx] <= tol)
        m[idx] = np.where(f == 0.0, mi, new)
        active[idx[done]] = False
    return m


def score_slope(m, c, s, sigma):
    """d(omega)/ds given the solved score ``m``."""
    u = c * norm_pdf_prime(s - m, sigma)
    return u / (1.0 + u)


def score_beta_gradient(m, z, g, beta, c, s, sigma):
    """d(omega)/d(beta), treating beta as an unconstrained vector.

    Rows of ``z``/``g`` pair with entries of ``m``/``c``/``s``.
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(g, dtype=float)
    beta = np.asarray(beta, dtype=float)
    phi = norm_pdf(s - m, sigma)
    denom = 1.0 + c * norm_pdf_prime(s - m, sigma)
    num = z + phi[..., None] * beta / g
    return num / denom[..., None]


def reconstruct_x(m, z, g, beta, s, sigma):
    phi = norm_pdf(np.asarray(s) - m, sigma)
    return np.asarray(z) + 0.5 * phi[..., None] * np.asarray(beta) / np.asarray(g)


# ---------------------------------------------------------------------------
# Single-agent API
# ---------------------------------------------------------------------------


def _check_dims(agent: AgentType, *vecs):
    for v in vecs:
        if np.asarray(v).shape[-1] != agent.dim:
            raise InvalidInputError(
                f"dimension mismatch: agent has d={agent.dim}, got {np.asarray(v).shape[-1]}"
            )


def _unit(beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if abs(np.linalg.norm(beta) - 1.0) > 1e-12:
        raise InvalidInputError("beta must have unit Euclidean norm")
    return beta


def expected_utility(agent: AgentType, x, policy: Policy, noise: NoiseModel) -> float:
    x = np.asarray(x, dtype=float)
    _check_dims(agent, x, policy.beta)
    reward = 1.0 - noise.cdf(policy.threshold - policy.beta @ x)
    return float(-agent.cost(x - agent.z) + reward)


def _require_regime(agent: AgentType, noise: NoiseModel):
    if noise_regime(agent.cost, noise) is NoiseRegime.DISCONTINUOUS:
        lo, _ = regime_thresholds(agent.cost.alpha)
        raise RegimeError(
            f"sigma^2={noise.sigma**2:.6g} <= {lo:.6g}: best response may not be unique"
        )


def best_response(
    agent: AgentType,
    beta,
    s: float,
    noise: NoiseModel,
    box: CovariateBox | None = None,
    strict: bool = True,
) -> np.ndarray:
    """Utility-maximising covariates ``x*`` for policy ``(beta, s)``.

    With ``strict`` the call refuses noise levels below the uniqueness bound;
    otherwise every FOC root is enumerated and the best one returned.
    Solutions outside ``box`` are clamped with a :class:`BoundaryWarning`.
    """
    beta = _unit(beta)
    _check_dims(agent, beta)
    if strict:
        _require_regime(agent, noise)
    box = box or CovariateBox.default(agent.dim)
    a, c = score_params(agent.z, agent.cost.g, beta)
    m = solve_scores(a, c, s, noise.sigma)
    x = reconstruct_x(m, agent.z, agent.cost.g, beta, s, noise.sigma)
    if not box.interior(x):
        warnings.warn(
            "best response outside the covariate box interior; clamped", BoundaryWarning,
            stacklevel=2,
        )
        x = np.clip(x, box.lo, box.hi)
    return x


def expected_score(agent, beta, s, noise, box=None, strict: bool = True) -> float:
    beta = _unit(beta)
    return float(beta @ best_response(agent, beta, s, noise, box, strict=strict))


def score_derivative(agent, beta, s, noise, box=None) -> float:
    """Closed-form ``d omega / ds`` at the (unique) best response."""
    beta = _unit(beta)
    _check_dims(agent, beta)
    _require_regime(agent, noise)
    m = expected_score(agent, beta, s, noise, box)
    _, c = score_params(agent.z, agent.cost.g, beta)
    return float(score_slope(m, c, s, noise.sigma))
