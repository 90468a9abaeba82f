import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import simpson
from scipy.stats import norm

from capstrat.agent import AgentType, CostSpec, NoiseModel
from capstrat.errors import InvalidInputError, NonConvergenceError, RegimeError
from capstrat.population import (
    CapacitySpec,
    TypeDistribution,
    equilibrium_policy_value,
    equilibrium_threshold,
    gradient_oracle,
    meanfield_fixed_point,
    natural_share_above,
    optimal_beta_2d,
    policy_value,
    polar_beta,
    quantile,
    raw_score_quantile,
    score_cdf,
    score_pdf,
    threshold_gradient,
    type_scores,
)
from capstrat.scenarios import high_dim_distribution, toy_distribution

BETA_STAR = np.array([0.345, 0.938]) / np.linalg.norm([0.345, 0.938])


@pytest.fixture(scope="module")
def toy():
    return toy_distribution()


def single(z=(1.0, 2.0), g=(1.0, 1.0), sigma=2.0, y0=0.0, y1=1.0):
    return TypeDistribution([AgentType(z, CostSpec(g), y0, y1)], [1.0], NoiseModel(sigma))


def test_single_type_cdf_pdf():
    dist = single()
    beta = np.array([0.6, 0.8])
    m = type_scores(dist, beta, 1.5)[0]
    assert score_cdf(dist, beta, 1.5, m) == pytest.approx(0.5, abs=1e-15)
    assert score_pdf(dist, beta, 1.5, m) == pytest.approx(1 / (2.0 * math.sqrt(2 * math.pi)))
    assert score_cdf(dist, beta, 1.5, 1e9) == 1.0
    assert score_cdf(dist, beta, 1.5, -1e9) == 0.0
    assert quantile(dist, beta, 1.5, 0.5) == pytest.approx(m, abs=1e-10)


def test_two_type_symmetric_median():
    types = [AgentType([3.0], CostSpec([1.0])), AgentType([-1.0], CostSpec([1.0]))]
    dist = TypeDistribution(types, [0.5, 0.5], NoiseModel(1.5))
    # far threshold: scores are the raw means 3 and -1
    assert quantile(dist, [1.0], 1e9, 0.5) == pytest.approx(1.0, abs=1e-10)


def test_cdf_matches_monte_carlo(toy):
    beta = np.array([0.6, 0.8])
    s = 7.0
    rng = np.random.default_rng(0)
    n = 10**7
    idx = rng.choice(toy.n_types, size=n, p=toy.probs)
    sc = type_scores(toy, beta, s)[idx] + toy.sigma * rng.standard_normal(n)
    for r in np.linspace(0, 14, 20):
        p = score_cdf(toy, beta, s, r)
        emp = np.mean(sc <= r)
        se = math.sqrt(p * (1 - p) / n)
        assert abs(emp - p) <= 3 * max(se, 1 / n)


def test_pdf_is_cdf_derivative_and_normalized(toy):
    beta = np.array([0.6, 0.8])
    s, h = 7.0, 1e-5
    for r in np.linspace(-5, 20, 26):
        fd = (score_cdf(toy, beta, s, r + h) - score_cdf(toy, beta, s, r - h)) / (2 * h)
        assert score_pdf(toy, beta, s, r) == pytest.approx(fd, abs=1e-6)
    grid = np.linspace(-50 * toy.sigma, 50 * toy.sigma, 20001)
    assert simpson(score_pdf(toy, beta, s, grid), x=grid) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("q", [0.1, 0.3, 0.7])
def test_quantile_round_trip(toy, q):
    beta = np.array([0.6, 0.8])
    r = quantile(toy, beta, 7.0, q)
    assert score_cdf(toy, beta, 7.0, r) == pytest.approx(q, abs=1e-10)


def test_large_sigma_equilibrium_is_raw_quantile():
    # costly movers: the strategic shift c * phi is below 1e-4 at sigma = 100
    base = toy_distribution()
    types = [AgentType(t.z, CostSpec([10.0, 10.0]), t.y0, t.y1) for t in base.types]
    dist = TypeDistribution(types, base.probs, NoiseModel(100.0))
    beta = np.array([0.6, 0.8])
    assert equilibrium_threshold(dist, beta, 0.7) == pytest.approx(raw_score_quantile(dist, beta, 0.7), abs=1e-3)


def test_multistart_agreement(toy):
    beta = np.array([1.0, 0.0])
    vals = [meanfield_fixed_point(toy, beta, 0.7, s0=s0).s_star for s0 in (-10, 0, 10)]
    assert max(vals) - min(vals) <= 1e-8


def test_deterministic_iterates_monotone(toy):
    beta = np.array([1.0, 0.0])
    res = meanfield_fixed_point(toy, beta, 0.7, s0=-10.0, tol=1e-13)
    err = np.abs(np.array(res.trace) - res.s_star)
    assert np.all(np.diff(err[err > 1e-11]) < 0)
    assert res.kappa_hat < 1


def test_nonconvergence_carries_trace(toy):
    with pytest.raises(NonConvergenceError) as info:
        meanfield_fixed_point(toy, np.array([1.0, 0.0]), 0.7, s0=-50, tol=1e-14, max_iter=2)
    assert len(info.value.trace) == 3


def test_regime_enforced():
    dist = TypeDistribution([AgentType([3.0, 0.0], CostSpec([0.1, 1.0]))], [1.0], NoiseModel(1.0))
    with pytest.raises(RegimeError):
        meanfield_fixed_point(dist, np.array([1.0, 0.0]), 0.7)


def test_capacity_spec_bounds():
    with pytest.raises(InvalidInputError):
        CapacitySpec(1.0)
    with pytest.raises(InvalidInputError):
        CapacitySpec(0.0)
    assert CapacitySpec(0.7).q == 0.7


def test_policy_value_limits(toy):
    beta = np.array([0.6, 0.8])
    assert policy_value(toy, beta, 5.0, -1e9) == pytest.approx(toy.probs @ toy.y1)
    assert policy_value(toy, beta, 5.0, 1e9) == pytest.approx(toy.probs @ toy.y0)
    flat = TypeDistribution(
        [AgentType(t.z, t.cost, 2.0, 2.0) for t in toy.types], toy.probs, toy.noise
    )
    assert policy_value(flat, beta, 5.0, 3.0) == pytest.approx(2.0)


def test_policy_value_monte_carlo(toy):
    beta = np.array([0.6, 0.8])
    s, r = 7.0, 8.0
    rng = np.random.default_rng(1)
    n = 10**7
    idx = rng.choice(toy.n_types, size=n, p=toy.probs)
    sc = type_scores(toy, beta, s)[idx] + toy.sigma * rng.standard_normal(n)
    y = np.where(sc > r, toy.y1[idx], toy.y0[idx])
    assert abs(y.mean() - policy_value(toy, beta, s, r)) <= 3 * y.std() / math.sqrt(n)


def test_veq_prefers_second_covariate(toy):
    assert equilibrium_policy_value(toy, BETA_STAR, 0.7) > equilibrium_policy_value(toy, np.array([1.0, 0.0]), 0.7)


def test_veq_permutation_invariant(toy):
    perm = np.random.default_rng(3).permutation(toy.n_types)
    other = TypeDistribution([toy.types[i] for i in perm], toy.probs[perm], toy.noise)
    beta = np.array([0.6, 0.8])
    assert equilibrium_policy_value(other, beta, 0.7) == pytest.approx(
        equilibrium_policy_value(toy, beta, 0.7), abs=1e-10
    )


def _fd_threshold(dist, beta, q, h=1e-4):
    d = beta.size
    basis = np.linalg.svd(np.eye(d) - np.outer(beta, beta))[0][:, : d - 1]
    grad = np.zeros(d)
    for k in range(d - 1):
        u = basis[:, k]
        sp = equilibrium_threshold(dist, (beta + h * u) / np.linalg.norm(beta + h * u), q, tol=1e-13)
        sm = equilibrium_threshold(dist, (beta - h * u) / np.linalg.norm(beta - h * u), q, tol=1e-13)
        grad += (sp - sm) / (2 * h) * u
    return grad


@pytest.mark.parametrize("name", ["toy", "high_dim"])
def test_threshold_gradient_fd(name):
    dist = toy_distribution() if name == "toy" else high_dim_distribution()
    beta = np.ones(dist.dim) / math.sqrt(dist.dim)
    tg = threshold_gradient(dist, beta, 0.7)
    fd = _fd_threshold(dist, beta, 0.7)
    assert np.linalg.norm(tg.tangent - fd) <= 0.05 * np.linalg.norm(fd)
    assert abs(tg.tangent @ beta) < 1e-12


def test_threshold_gradient_single_isotropic():
    dist = single(z=(2.0, 2.0), g=(1.0, 1.0), sigma=2.0)
    beta = np.array([1.0, 1.0]) / math.sqrt(2)
    tg = threshold_gradient(dist, beta, 0.7)
    # score = beta.z + const(|beta|): raw gradient lies along z
    z = np.array([2.0, 2.0])
    cos = tg.raw @ z / (np.linalg.norm(tg.raw) * np.linalg.norm(z))
    assert cos == pytest.approx(1.0, abs=1e-10)


def test_policy_gradient_oracle_fd(toy):
    for theta in (0.0, 0.8, 2.2):
        beta = polar_beta(theta)
        u = np.array([-math.sin(theta), math.cos(theta)])
        h = 1e-4
        fd = (
            equilibrium_policy_value(toy, polar_beta(theta + h), 0.7)
            - equilibrium_policy_value(toy, polar_beta(theta - h), 0.7)
        ) / (2 * h)
        orc = gradient_oracle(toy, beta, 0.7)
        assert orc.policy @ u == pytest.approx(fd, abs=1e-6)
        assert np.allclose(orc.policy, orc.model + orc.equilibrium)


def test_natural_share(toy):
    nat = toy.tag_mask("natural")
    assert natural_share_above(toy, BETA_STAR, 0.7, np.ones(toy.n_types, bool)) == pytest.approx(1.0)
    lo = natural_share_above(toy, np.array([1.0, 0.0]), 0.7, nat)
    hi = natural_share_above(toy, BETA_STAR, 0.7, nat)
    assert lo < hi
    with pytest.raises(InvalidInputError):
        natural_share_above(toy, BETA_STAR, 0.7, [True])


def test_optimal_beta_near_reported(toy):
    theta, beta, v = optimal_beta_2d(toy, 0.7, n_grid=181)
    assert abs(theta - 1.22) < 0.1
    assert v >= equilibrium_policy_value(toy, BETA_STAR, 0.7) - 1e-12


def test_json_round_trip(tmp_path, toy):
    path = tmp_path / "toy.json"
    toy.to_json(path)
    back = TypeDistribution.from_json(path)
    assert np.array_equal(back.Z, toy.Z) and np.array_equal(back.G, toy.G)
    assert np.array_equal(back.probs, toy.probs)
    assert list(back.tag_mask("natural")) == list(toy.tag_mask("natural"))


def test_json_malformed(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(InvalidInputError):
        TypeDistribution.from_json(p)
    p.write_text('{"types": []}')
    with pytest.raises(InvalidInputError):
        TypeDistribution.from_json(p)


def test_probs_validation():
    t = AgentType([0.0], CostSpec([1.0]))
    with pytest.raises(InvalidInputError):
        TypeDistribution([t, t], [0.6, 0.6], NoiseModel(1.0))
    with pytest.raises(InvalidInputError):
        TypeDistribution([t], [1.0, 0.0], NoiseModel(1.0))


@settings(max_examples=40, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(0.05, 0.95))
def test_equilibrium_is_fixed_point(theta, q):
    dist = toy_distribution()
    beta = polar_beta(theta)
    s = equilibrium_threshold(dist, beta, q)
    assert abs(s - quantile(dist, beta, s, q)) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.floats(-20, 30), st.floats(-20, 30))
def test_cdf_monotone_in_r(r1, r2):
    dist = toy_distribution()
    beta = np.array([0.6, 0.8])
    lo, hi = min(r1, r2), max(r1, r2)
    assert score_cdf(dist, beta, 7.0, lo) <= score_cdf(dist, beta, 7.0, hi)


def test_raw_quantile_matches_scipy_for_single_type():
    dist = single(z=(1.0, 0.0), sigma=2.0)
    assert raw_score_quantile(dist, np.array([1.0, 0.0]), 0.7) == pytest.approx(1.0 + 2.0 * norm.ppf(0.7), abs=1e-10)
