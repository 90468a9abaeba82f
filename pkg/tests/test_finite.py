import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from capstrat.agent import AgentType, CostSpec, NoiseModel
from capstrat.errors import InvalidInputError
from capstrat.finite import (
    SimConfig,
    _sign_table,
    _sign_table_rows,
    empirical_quantile,
    run_perturbed_round,
    sample_agents,
    stochastic_fpi,
    threshold_trace_csv,
)
from capstrat.population import TypeDistribution, equilibrium_threshold, type_scores
from capstrat.scenarios import toy_distribution

BETA = np.array([0.6, 0.8])


@pytest.fixture(scope="module")
def toy():
    return toy_distribution()


def test_sample_single_type():
    dist = TypeDistribution([AgentType([0.0], CostSpec([1.0]))], [1.0], NoiseModel(1.0))
    s = sample_agents(dist, 100, np.random.default_rng(0))
    assert np.all(s.type_idx == 0)
    assert s.eps.shape == (100, 1)


def test_sample_frequencies_and_determinism():
    t = AgentType([0.0], CostSpec([1.0]))
    dist = TypeDistribution([t, t], [0.5, 0.5], NoiseModel(1.0))
    a = sample_agents(dist, 10**6, np.random.default_rng(5))
    b = sample_agents(dist, 10**6, np.random.default_rng(5))
    assert abs(np.mean(a.type_idx == 0) - 0.5) <= 0.002
    assert np.array_equal(a.type_idx, b.type_idx) and np.array_equal(a.eps, b.eps)


def test_empirical_quantile_examples():
    assert empirical_quantile([5, 3, 1, 4, 2], 0.5) == 3
    assert empirical_quantile([7.0], 0.3) == 7.0
    x = np.random.default_rng(0).standard_normal(10**6)
    assert empirical_quantile(x, 0.7) == pytest.approx(0.5244, abs=0.005)
    with pytest.raises(InvalidInputError):
        empirical_quantile([], 0.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200), st.floats(0.01, 0.99))
def test_empirical_quantile_rank(xs, q):
    r = empirical_quantile(xs, q)
    k = math.ceil(q * len(xs))
    assert r == sorted(xs)[k - 1]


def test_sign_table_rows_agree():
    d = 3
    table = _sign_table(d)
    assert table.shape == (8, 3)
    assert np.array_equal(_sign_table_rows(np.arange(8), d), table)
    assert len({tuple(r) for r in table}) == 8


def test_simconfig_validation():
    with pytest.raises(InvalidInputError):
        SimConfig(n=0)
    with pytest.raises(InvalidInputError):
        SimConfig(n=10, b_beta=-1)
    with pytest.raises(InvalidInputError):
        SimConfig(n=10, q=1.5)


def test_fpi_concentrates_near_meanfield(toy):
    s_star = equilibrium_threshold(toy, BETA, 0.7)
    tr = stochastic_fpi(toy, BETA, SimConfig(n=10**4, seed=0), 0.0, 60, np.random.default_rng(0))
    tail = tr[-20:]
    assert abs(tail.mean() - s_star) <= 3 * tail.std()


def test_fpi_invariant_after_burn_in(toy):
    s_star = equilibrium_threshold(toy, BETA, 0.7)
    hits = total = 0
    for seed in range(10):
        tr = stochastic_fpi(toy, BETA, SimConfig(n=10**5), 0.0, 60, np.random.default_rng(seed))
        hits += np.sum(np.abs(tr[30:] - s_star) <= 0.05)
        total += tr[30:].size
    assert hits >= 0.95 * total


def test_fpi_deterministic_and_truncated(toy):
    cfg = SimConfig(n=500, b_beta=0.025, b_s=0.2, trunc_d=8.0, check_truncation=False)
    a = stochastic_fpi(toy, BETA, cfg, 0.0, 20, np.random.default_rng(1))
    b = stochastic_fpi(toy, BETA, cfg, 0.0, 20, np.random.default_rng(1))
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 8.0)


def test_truncation_check(toy):
    with pytest.raises(InvalidInputError):
        stochastic_fpi(toy, BETA, SimConfig(n=10, trunc_d=1.0), 0.0, 1, np.random.default_rng(0))


def test_large_sigma_single_type_is_raw_quantile():
    dist = TypeDistribution([AgentType([2.0], CostSpec([10.0]))], [1.0], NoiseModel(100.0))
    rng_a = np.random.default_rng(3)
    tr = stochastic_fpi(dist, np.array([1.0]), SimConfig(n=10**5), 0.0, 5, rng_a)
    # every step is the 0.7-quantile of N(2 + tiny shift, 100^2)
    assert np.all(np.abs(tr - (2.0 + 100 * 0.5244005)) < 1.5)


def test_round_bookkeeping(toy):
    cfg = SimConfig(n=20000, b_beta=0.025, b_s=0.2)
    s = equilibrium_threshold(toy, BETA, 0.7)
    rec = run_perturbed_round(toy, BETA, cfg, s, np.random.default_rng(2))
    betas = BETA + 0.025 * rec.zeta
    raw = np.einsum("ij,ij->i", betas, rec.x)
    assert np.array_equal(rec.score, raw - 0.2 * rec.xi)
    assert np.array_equal(rec.w, (raw > rec.r_realized + 0.2 * rec.xi).astype(np.int8))
    assert np.array_equal(rec.i_ind, (raw > rec.r_realized).astype(np.int8))
    assert np.all(np.abs(rec.zeta.mean(axis=0)) <= 3 / math.sqrt(rec.n))
    assert abs(rec.w.mean() - 0.3) <= 0.02
    assert np.array_equal(rec.y, np.where(rec.w == 1, toy.y1[rec.type_idx], toy.y0[rec.type_idx]))


def test_round_covariates_center_on_best_responses(toy):
    from capstrat.agent import best_response

    s = 8.0
    rec = run_perturbed_round(toy, BETA, SimConfig(n=200000), s, np.random.default_rng(4))
    for k in (0, 7):
        xs = rec.x[rec.type_idx == k]
        target = best_response(toy.types[k], BETA, s, toy.noise)
        assert np.all(np.abs(xs.mean(axis=0) - target) <= 4 * toy.sigma / math.sqrt(len(xs)))


def test_round_without_perturbation(toy):
    cfg = SimConfig(n=1000)
    rec = run_perturbed_round(toy, BETA, cfg, 8.0, np.random.default_rng(0))
    assert np.array_equal(rec.w, rec.i_ind)
    assert not rec.zeta.any() and not rec.xi.any()


def test_record_csv(tmp_path, toy):
    cfg = SimConfig(n=50, b_beta=0.025, b_s=0.2)
    rec = run_perturbed_round(toy, BETA, cfg, 8.0, np.random.default_rng(0))
    path = tmp_path / "rec.csv"
    rec.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0][:4] == ["agent_idx", "zeta_1", "zeta_2", "xi"]
    assert len(rows) == 51
    assert float(rows[1][6]) == rec.score[0]
    side = json.loads((tmp_path / "rec.csv.json").read_text())
    assert side["r_realized"] == rec.r_realized


def test_trace_csv(tmp_path):
    path = tmp_path / "t.csv"
    threshold_trace_csv(path, {"n=10": np.array([1.0, 2.0])}, 1.5)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["label", "t", "threshold"]
    assert rows[-1][0] == "meanfield"
