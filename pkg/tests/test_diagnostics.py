import math

import numpy as np
import pytest
from scipy import optimize, special, stats

from spsv.diagnostics import (decode_volatility, jarque_bera, jb_from_moments, model_for, oos_score,
                              predictive_cdf, pseudo_residuals, qq_points, uniformity_discrepancy)
from spsv.estimation import FitConfig, fit
from spsv.grid import build_grid, build_model
from spsv.models import SV0Params
from spsv.series import ReturnSeries
from spsv.simulation import simulate_params

from conftest import brute_likelihood, oracle_chain, oracle_emissions, random_params


def _brute_predictive_cdf(params, y, t, lower, upper, m):
    delta, omega = oracle_chain(lower, upper, m, params.phi, params.sigma)
    b = np.linspace(lower, upper, m + 1)[:-1] + (upper - lower) / (2 * m)
    P = oracle_emissions(params, b, y[: t + 1])
    P[t] = [stats.norm.cdf(y[t] * math.exp(-bi / 2) / params.beta) for bi in b]
    num = brute_likelihood(delta, omega, P)
    if t == 0:
        return num
    return num / brute_likelihood(delta, omega, P[:t])


def test_predictive_cdf_matches_enumeration(rng):
    for _ in range(5):
        p = random_params("sv0", rng)
        y = list(rng.normal(0, 1, 4))
        model = build_model(build_grid(-2, 2, 3), p.phi, p.sigma)
        series = ReturnSeries.from_values(y)
        for t in range(4):
            ref = _brute_predictive_cdf(p, y, t, -2, 2, 3)
            assert predictive_cdf(model, p, series, t, clip=False) == pytest.approx(ref, abs=1e-10)


def test_pseudo_residuals_agree_with_pointwise_cdf(rng):
    p = SV0Params(0.9, 0.3, 1.0)
    model = build_model(build_grid(-3, 3, 25), p.phi, p.sigma)
    series = ReturnSeries.from_values(rng.normal(size=30))
    res = pseudo_residuals(model, p, series)
    for t in (0, 1, 7, 29):
        assert res.cdf[t] == pytest.approx(predictive_cdf(model, p, series, t), abs=1e-14)
    np.testing.assert_array_equal(res.values, special.ndtri(res.cdf))


def test_median_gives_zero_residual():
    p = SV0Params(0.9, 0.3, 1.0)
    model = build_model(build_grid(-4, 4, 60), p.phi, p.sigma)
    head = [0.3, -1.2, 0.8]

    def f(x):
        return predictive_cdf(model, p, ReturnSeries.from_values(head + [x]), 3) - 0.5 * \
            predictive_cdf(model, p, ReturnSeries.from_values(head + [1e6]), 3)

    x = optimize.brentq(f, -5, 5, xtol=1e-14)
    series = ReturnSeries.from_values(head + [x])
    total = predictive_cdf(model, p, ReturnSeries.from_values(head + [1e6]), 3)
    # the grid keeps essentially all mass, so the predictive law is proper
    assert total == pytest.approx(1.0, abs=1e-6)
    assert predictive_cdf(model, p, series, 3) == pytest.approx(0.5, abs=1e-6)
    assert pseudo_residuals(model, p, series).values[3] == pytest.approx(0.0, abs=1e-5)


def test_extreme_observation_cdf_tends_to_one():
    p = SV0Params(0.9, 0.3, 1.0)
    model = build_model(build_grid(-4, 4, 60), p.phi, p.sigma)
    series = ReturnSeries.from_values([0.1, 0.2, 1e9])
    assert predictive_cdf(model, p, series, 2) == pytest.approx(1.0, abs=1e-6)


def test_quantile_values():
    assert special.ndtri(0.5) == 0.0
    assert special.ndtri(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
    u = np.linspace(1e-15, 1 - 1e-15, 1001)
    # accuracy of the quantile function against an independent inversion of the CDF
    np.testing.assert_allclose(special.ndtr(special.ndtri(u)), u, rtol=1e-9, atol=1e-16)


def test_clamping_and_missing():
    p = SV0Params(0.5, 0.3, 0.01)
    model = build_model(build_grid(-3, 3, 20), p.phi, p.sigma)
    res = pseudo_residuals(model, p, ReturnSeries.from_values([0.0, math.nan, -50.0]))
    assert math.isnan(res.values[1])
    assert res.values[2] == -8.0
    assert list(res.clamped) == [False, False, True]
    # an observation of zero likelihood: its CDF is 1, later residuals are undefined
    with pytest.warns(RuntimeWarning):
        res = pseudo_residuals(model, p, ReturnSeries.from_values([0.0, 50.0, 0.01]))
    assert res.values[1] == 8.0 and res.clamped[1]
    assert math.isnan(res.values[2])


def test_jarque_bera_zero_for_symmetric_mesokurtic_sample():
    base = np.linspace(0.05, 3.0, 200)

    def kurt(power):
        x = np.concatenate([base**power, -base**power])
        return np.mean(x**4) / np.mean(x**2) ** 2 - 3.0

    power = optimize.brentq(kurt, 0.5, 3.0, xtol=1e-15)
    x = np.concatenate([base**power, -base**power])
    stat, p = jarque_bera(x)
    assert stat == pytest.approx(0.0, abs=1e-10)
    assert p == pytest.approx(1.0, abs=1e-10)


def test_jarque_bera_arithmetic_and_scipy(rng):
    assert jb_from_moments(600, 1.0, 3.0) == pytest.approx(100.0, rel=1e-15)
    x = rng.standard_t(5, 700)
    ours = jarque_bera(x)
    ref = stats.jarque_bera(x)
    assert ours[0] == pytest.approx(ref.statistic, rel=1e-10)
    assert ours[1] == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-300)


def test_jarque_bera_affine_invariant(rng):
    x = rng.gamma(2.0, size=300)
    assert jarque_bera(3.7 * x - 11.0)[0] == pytest.approx(jarque_bera(x)[0], abs=1e-10)


def test_jarque_bera_small_sample_rejected():
    with pytest.raises(ValueError):
        jarque_bera(np.arange(7.0))


def test_jarque_bera_size_under_normality():
    rejections = sum(jarque_bera(np.random.default_rng(s).standard_normal(1000))[1] < 0.05 for s in range(100))
    assert rejections <= 10


def test_qq_points():
    theo, emp = qq_points(np.array([2.0, math.nan, -1.0, 0.5]))
    np.testing.assert_array_equal(emp, [-1.0, 0.5, 2.0])
    np.testing.assert_allclose(theo, special.ndtri([1 / 6, 0.5, 5 / 6]))


def _sv0_fit_and_series():
    y, _ = simulate_params(SV0Params(0.95, 0.25, 0.01), 500, 41)
    series = ReturnSeries.from_values(y)
    res = fit(series[:400], "sv0", FitConfig(lower=-4, upper=4, m=40, n_starts=1))
    return res, series


def test_oos_score_additive_and_empty_tail():
    res, series = _sv0_fit_and_series()
    rep = oos_score(res, series, 400)
    assert rep.in_sample_log_lik + rep.out_of_sample_log_lik == rep.full_log_lik
    grid = build_grid(-4, 4, 40)
    model = model_for(res.params, grid)
    from spsv.hmm import log_likelihood
    assert rep.full_log_lik == pytest.approx(log_likelihood(model, res.params, series), abs=1e-9)
    assert rep.in_sample_log_lik == pytest.approx(log_likelihood(model, res.params, series[:400]), abs=1e-9)
    assert rep.jb_statistic is not None
    tail = oos_score(res, series, len(series))
    assert tail.out_of_sample_log_lik == 0.0
    with pytest.raises(ValueError):
        oos_score(res, series, 0)
    with pytest.raises(ValueError):
        oos_score(res, series, len(series) + 1)


def test_decode_single_cell_and_range(rng):
    p = SV0Params(0.9, 0.3, 1.0)
    series = ReturnSeries.from_values(rng.normal(size=40))
    one = decode_volatility(build_model(build_grid(-1, 1, 1), p.phi, p.sigma), p, series)
    np.testing.assert_array_equal(one.log_vol, 0.0)
    many = decode_volatility(build_model(build_grid(-3, 3, 17), p.phi, p.sigma), p, series)
    assert many.states.min() >= 0 and many.states.max() < 17
    np.testing.assert_allclose(many.vol, np.exp(many.log_vol / 2))


def test_decoded_path_tracks_true_volatility():
    truth = SV0Params(0.98, 0.2, 0.01)
    y, g = simulate_params(truth, 1000, 43)
    model = build_model(build_grid(-5, 5, 100), truth.phi, truth.sigma)
    dec = decode_volatility(model, truth, ReturnSeries.from_values(y))
    corr = np.corrcoef(dec.log_vol, g)[0, 1]
    print(f"decoded-vs-true correlation {corr:.3f}")
    assert corr > 0.8


def test_uniformity_improves_with_finer_grid():
    # sigma of the order of the coarsest cell width, so the grid resolution matters
    truth = SV0Params(0.98, 0.1, 1.0)
    y, _ = simulate_params(truth, 5000, 44)
    series = ReturnSeries.from_values(y)
    ad = []
    for m in (25, 50, 100):
        model = build_model(build_grid(-5, 5, m), truth.phi, truth.sigma)
        ad.append(uniformity_discrepancy(pseudo_residuals(model, truth, series).cdf))
    print("Anderson-Darling by m:", ad)
    assert ad[0] > ad[1] > ad[2]
