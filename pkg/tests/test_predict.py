import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from lapsemix.dists import lognormal_survival
from lapsemix.gibbs import PosteriorDraws
from lapsemix.model import MixtureParams
from lapsemix.predict import (conditional_churn_prob, conditional_probabilities, default_grid,
                              mixture_survival, posterior_survival_curve)
from lapsemix.simulate import BENCHMARK_PARAMS, SCENARIO_PROFILES, portfolio_params

params_st = st.builds(
    lambda w, b0, b1, s: MixtureParams.sorted([w, 1 - w], [[b0, b1[0]], [b0 + 0.7, b1[1]]], s),
    st.floats(0.01, 0.99), st.floats(-2, 5), st.tuples(st.floats(-1, 1), st.floats(-1, 1)),
    st.tuples(st.floats(0.01, 3), st.floats(0.01, 3)))


def test_k1_reduces_to_lognormal():
    p = MixtureParams([1.0], [[2.0, 0.5]], [0.4])
    t = np.array([1.0, 5.0, 30.0])
    np.testing.assert_allclose(mixture_survival(p, [1.0], t), lognormal_survival(t, 2.5, 0.4),
                               rtol=1e-14)


def test_common_median():
    p = MixtureParams([0.3, 0.7], [[2.0, 0.0], [2.0, 0.0]], [0.1, 2.0])
    assert mixture_survival(p, [0.0], math.exp(2.0)) == pytest.approx(0.5, abs=1e-15)


def test_benchmark_value():
    s = mixture_survival(BENCHMARK_PARAMS, [0.0], math.exp(3.3))
    assert s == pytest.approx(0.3 + 0.4 * stats.norm.cdf(0.7 / math.sqrt(0.039)), abs=1e-12)
    assert s == pytest.approx(0.6999, abs=1e-4)


def test_survival_limits():
    assert mixture_survival(BENCHMARK_PARAMS, [1.0], 1e-300) == pytest.approx(1.0, abs=1e-12)
    assert mixture_survival(BENCHMARK_PARAMS, [1.0], 0.0) == 1.0
    assert mixture_survival(BENCHMARK_PARAMS, [1.0], 1e12) < 1e-12
    with pytest.raises(ValueError):
        mixture_survival(BENCHMARK_PARAMS, [1.0], -1.0)
    with pytest.raises(ValueError):
        mixture_survival(BENCHMARK_PARAMS, [1.0, 2.0], 1.0)


@settings(max_examples=50, deadline=None)
@given(params_st, st.floats(-2, 2), st.lists(st.floats(1e-3, 1e4), min_size=2, max_size=30))
def test_survival_nonincreasing(p, x, ts):
    s = mixture_survival(p, [x], np.sort(ts))
    assert np.all(np.diff(s) <= 0) and np.all((0 <= s) & (s <= 1))


@settings(max_examples=50, deadline=None)
@given(params_st, st.floats(-1, 1), st.floats(0, 50), st.floats(0, 50), st.floats(0, 50))
def test_chain_rule(p, x, c, da, db):
    a, b = c + da, c + da + db
    if mixture_survival(p, [x], c) < 1e-200:
        return
    lhs = conditional_churn_prob(p, [x], c, b, c).estimate
    rhs = conditional_churn_prob(p, [x], c, a, c).estimate + conditional_churn_prob(p, [x], a, b, c).estimate
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_zero_width_is_exactly_zero():
    for x in SCENARIO_PROFILES.values():
        assert conditional_churn_prob(portfolio_params(), x, 5, 5, 5).estimate == 0.0


def test_infinite_upper_bound():
    p = BENCHMARK_PARAMS
    est = conditional_churn_prob(p, [0.0], 30, math.inf, 10).estimate
    expect = mixture_survival(p, [0.0], 30) / mixture_survival(p, [0.0], 10)
    assert est == pytest.approx(expect, rel=1e-14)
    assert conditional_churn_prob(p, [0.0], 30, math.inf, 10).to_dict()["b"] is None


def test_query_validation():
    p = BENCHMARK_PARAMS
    with pytest.raises(ValueError):
        conditional_churn_prob(p, [0.0], 5, 3, 0)
    with pytest.raises(ValueError):
        conditional_churn_prob(p, [0.0], 3, 12, 6)
    with pytest.raises(ValueError, match="numerically zero"):
        conditional_churn_prob(p, [0.0], 1e15, 2e15, 1e15)


def _draws(params_list, counts=None):
    M = len(params_list)
    return PosteriorDraws(np.arange(M), np.array([p.weights for p in params_list]),
                          np.array([p.coefficients for p in params_list]),
                          np.array([p.variances for p in params_list]),
                          np.zeros((M, params_list[0].K), dtype=int))


def test_degenerate_draws_zero_band():
    d = _draws([BENCHMARK_PARAMS] * 150)
    grid = np.geomspace(1, 200, 50)
    c = posterior_survival_curve(d, [1.0], grid)
    np.testing.assert_allclose(c.hi95 - c.lo95, 0.0, atol=1e-15)
    np.testing.assert_allclose(c.mean, mixture_survival(BENCHMARK_PARAMS, [1.0], grid), atol=1e-15)


def test_band_properties_random_draws():
    g = np.random.default_rng(0)
    plist = []
    for _ in range(300):
        b = np.array([[3.3, 0.5], [4.0, 0.8]]) + g.normal(scale=0.1, size=(2, 2))
        w = g.dirichlet([60, 40])
        plist.append(MixtureParams.sorted(w, b, np.array([0.3, 0.039]) * g.uniform(0.8, 1.2, 2)))
    c = posterior_survival_curve(_draws(plist), [1.0], np.geomspace(1, 500, 200))
    for arr in (c.mean, c.lo95, c.hi95):
        assert np.all(np.diff(arr) <= 0)
        assert np.all((arr >= 0) & (arr <= 1))
    assert np.all(c.lo95 <= c.mean) and np.all(c.mean <= c.hi95)


def test_point_estimate_has_no_band(tmp_path):
    c = posterior_survival_curve(BENCHMARK_PARAMS, [0.0], [1.0, 2.0])
    assert c.lo95 is None
    c.write_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "time,mean,lo95,hi95"
    est = conditional_churn_prob(BENCHMARK_PARAMS, [0.0], 3, 12, 3)
    assert "lo95" not in est.to_dict()


def test_draws_probability_summary():
    g = np.random.default_rng(1)
    plist = [MixtureParams([0.6, 0.4], [[3.3 + g.normal(scale=0.05), 0.5], [4.0, 0.8]], [0.3, 0.039])
             for _ in range(200)]
    d = _draws(plist)
    est = conditional_churn_prob(d, [0.0], 12, 36, 6)
    per = conditional_probabilities(d, [0.0], 12, 36, 6)
    assert est.estimate == pytest.approx(per.mean(), rel=1e-12)
    assert est.lo95 <= est.estimate <= est.hi95
    assert set(est.to_dict()) == {"estimate", "lo95", "hi95", "a", "b", "c", "x"}


def test_grid_validation_and_default():
    with pytest.raises(ValueError):
        posterior_survival_curve(BENCHMARK_PARAMS, [0.0], [2.0, 1.0])
    g = default_grid([3.0, 1.0, 7.0])
    assert len(g) == 200 and g[0] == pytest.approx(1.0) and g[-1] == pytest.approx(7.0)
    assert np.allclose(np.diff(np.log(g)), np.log(7) / 199)


TABLE3 = {"scenario1": (0.394, 0.194, 0.100, 0.312),
          "scenario2": (0.247, 0.078, 0.059, 0.616),
          "scenario3": (0.123, 0.086, 0.067, 0.724)}
TABLE4 = {"scenario1": (0.320, 0.243, 0.200),
          "scenario2": (0.104, 0.087, 0.077),
          "scenario3": (0.098, 0.085, 0.076)}


@pytest.mark.parametrize("name", list(TABLE3))
def test_frozen_calibration_tracks_targets(name):
    """The frozen portfolio table reproduces the scenario probabilities it
    was calibrated against to within 0.02."""
    p, x = portfolio_params(), SCENARIO_PROFILES[name]
    t3 = [conditional_churn_prob(p, x, a, b, 3).estimate
          for a, b in ((3, 12), (12, 24), (24, 36), (36, math.inf))]
    t4 = [conditional_churn_prob(p, x, c, c + 12, c).estimate for c in (12, 24, 36)]
    np.testing.assert_allclose(t3, TABLE3[name], atol=0.02)
    np.testing.assert_allclose(t4, TABLE4[name], atol=0.02)


def test_scenario_ordering_of_first_year_risk():
    p = portfolio_params()
    r = {k: conditional_churn_prob(p, x, 3, 12, 3).estimate for k, x in SCENARIO_PROFILES.items()}
    assert r["scenario1"] > r["scenario2"] > r["scenario3"]
