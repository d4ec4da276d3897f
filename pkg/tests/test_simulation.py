import math

import numpy as np
import pytest
from scipy import integrate, stats

from spsv.estimation import FitConfig, fit, standard_errors
from spsv.models import SV0Params, SVspParams, SVtParams
from spsv.series import ReturnSeries
from spsv.simulation import (D2_BETA, D2_MU, DESIGN_PHI, DESIGN_SIGMA, SimSpec, design1_cdf, design1_eps,
                             design1_moments, design1_pdf, design2_cdf, design2_eps, design2_pdf,
                             rng_for, simulate, simulate_design1, simulate_design2, simulate_params)
from spsv.spline import build_basis


def _acf(x, lag=1):
    x = x - x.mean()
    return float(x[lag:] @ x[:-lag] / (x @ x))


def _mixture_moments_by_quadrature():
    def mom(k):
        return integrate.quad(lambda x: x**k * design1_pdf(x), -np.inf, np.inf, limit=400, epsabs=1e-16)[0]
    m1, m2, m3, m4 = (mom(k) for k in range(1, 5))
    var = m2 - m1**2
    return {"mean": m1, "sd": math.sqrt(var),
            "skewness": (m3 - 3 * m1 * m2 + 2 * m1**3) / var**1.5,
            "kurtosis": (m4 - 4 * m1 * m3 + 6 * m1**2 * m2 - 3 * m1**4) / var**2}


def test_design1_moments_match_quadrature():
    exact = design1_moments()
    quad = _mixture_moments_by_quadrature()
    for k in exact:
        assert exact[k] == pytest.approx(quad[k], rel=1e-7, abs=1e-10)
    # the literal mixture has mean 0.35(-0.02) + 0.65(0.02) + 0.006 = 0.012, not zero
    assert exact["mean"] == pytest.approx(0.012, abs=1e-15)
    assert exact["skewness"] == pytest.approx(-0.22, abs=0.005)
    assert exact["kurtosis"] == pytest.approx(3.58, abs=0.005)


def test_design1_monte_carlo_moments():
    eps = design1_eps(10_000_000, rng_for(123))
    exact = design1_moments()
    c = eps - eps.mean()
    assert eps.mean() == pytest.approx(exact["mean"], abs=5 * exact["sd"] / math.sqrt(eps.size))
    assert np.std(eps) == pytest.approx(exact["sd"], rel=2e-3)
    assert np.mean(c**3) / np.std(eps) ** 3 == pytest.approx(exact["skewness"], abs=0.02)
    assert np.mean(c**4) / np.var(eps) ** 2 == pytest.approx(exact["kurtosis"], abs=0.1)


def test_design_densities_are_consistent():
    for pdf, cdf in ((design1_pdf, design1_cdf), (design2_pdf, design2_cdf)):
        assert integrate.quad(pdf, -np.inf, np.inf)[0] == pytest.approx(1.0, abs=1e-8)
        for x in (-0.05, 0.0, 0.031):
            assert cdf(x) == pytest.approx(integrate.quad(pdf, -np.inf, x)[0], abs=1e-8)


def test_design1_draws_follow_density():
    eps = design1_eps(200_000, rng_for(5))
    assert stats.kstest(eps, design1_cdf).pvalue > 0.001


def test_design2_location_and_kurtosis():
    eps = design2_eps(10_000_000, rng_for(7))
    sd_t = D2_BETA * math.sqrt(10 / 8)
    assert eps.mean() == pytest.approx(D2_BETA * D2_MU, abs=5 * sd_t / math.sqrt(eps.size))
    assert sd_t == pytest.approx(design1_moments()["sd"], rel=1e-14)
    c = eps - eps.mean()
    assert 6 / (10 - 4) == 1.0
    assert np.mean(c**4) / np.var(eps) ** 2 - 3 == pytest.approx(1.0, abs=0.05)
    assert stats.kstest(eps[:200_000], design2_cdf).pvalue > 0.001


def test_determinism():
    a = simulate_design1(500, 9)
    b = simulate_design1(500, 9)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert not np.array_equal(a[0], simulate_design1(500, 10)[0])
    np.testing.assert_array_equal(simulate_design2(300, 4)[0], simulate_design2(300, 4)[0])
    p = SVtParams(0.9, 0.2, 0.01, 5.0)
    np.testing.assert_array_equal(simulate_params(p, 300, 1)[0], simulate_params(p, 300, 1)[0])


def test_lengths_and_design_constants():
    y, g = simulate_design1(4000, 1)
    assert y.shape == g.shape == (4000,)
    assert (DESIGN_PHI, DESIGN_SIGMA) == (0.98, 0.1)
    spec = SimSpec(50, design=1, burn_in=25, seed=3)
    assert simulate(spec)[0].shape == (50,)


def test_degenerate_volatility_gives_innovations():
    p = SV0Params(0.0, 1e-8, 0.5)
    y, g = simulate_params(p, 1000, 17)
    assert np.max(np.abs(g)) < 1e-6
    rng = rng_for(17)
    rng.standard_normal(1000)  # the volatility shocks come first in the stream
    eps = 0.5 * rng.standard_normal(1000)
    np.testing.assert_allclose(y, eps, rtol=1e-6)


def test_stationary_log_volatility():
    phi, sigma, T = 0.95, 0.3, 100_000
    _, g = simulate_params(SV0Params(phi, sigma, 0.01), T, 21)
    var = sigma**2 / (1 - phi**2)
    # standard errors of the mean and variance of an AR(1) path
    se_mean = math.sqrt(var * (1 + phi) / (1 - phi) / T)
    se_var = var * math.sqrt(2 * (1 + phi**2) / (1 - phi**2) / T)
    assert abs(g.mean()) < 3 * se_mean
    assert abs(g.var() - var) < 3 * se_var


def test_sv0_stylized_facts():
    T = 100_000
    y, _ = simulate_params(SV0Params(0.95, 0.3, 0.01), T, 22)
    assert abs(_acf(y)) < 3 / math.sqrt(T)
    assert _acf(y**2) > 3 / math.sqrt(T)


def test_design1_stylized_facts():
    T = 100_000
    y, _ = simulate_design1(T, 23)
    mom = design1_moments()
    v = DESIGN_SIGMA**2 / (1 - DESIGN_PHI**2)
    # lag-1 autocorrelation of y implied by the nonzero innovation mean
    cov = mom["mean"] ** 2 * (math.exp(v * (1 + DESIGN_PHI) / 4) - math.exp(v / 4))
    var = (mom["sd"] ** 2 + mom["mean"] ** 2) * math.exp(v / 2) - mom["mean"] ** 2 * math.exp(v / 4)
    rho = cov / var
    assert rho == pytest.approx(0.0093, abs=2e-4)
    assert abs(_acf(y) - rho) < 3 / math.sqrt(T)
    assert _acf(y**2) > 3 / math.sqrt(T)
    c = y - y.mean()
    assert np.mean(c**4) / np.var(y) ** 2 > 3


def test_spline_params_simulate_from_their_density():
    basis = build_basis(4, 3, 0.5)
    p = SVspParams(0.0, 1e-8, basis, np.linspace(-1, 1, basis.n_basis))
    y, _ = simulate_params(p, 50_000, 31)
    from spsv.spline import density_cdf
    assert stats.kstest(y, lambda x: density_cdf(basis, p.weights, x)).pvalue > 0.001


@pytest.mark.parametrize("bad", [dict(T=0, design=1), dict(T=10, design=3), dict(T=10),
                                 dict(T=10, design=1, params=SV0Params(0.5, 0.1, 1.0)),
                                 dict(T=10, design=1, burn_in=-1)])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        SimSpec(**bad)


def test_simulate_fit_simulate_round_trip():
    cfg = FitConfig(lower=-4, upper=4, m=40, n_starts=1)
    y, _ = simulate_params(SV0Params(0.95, 0.25, 0.01), 2000, 51)
    s1 = ReturnSeries.from_values(y)
    first = fit(s1, "sv0", cfg)
    y2, _ = simulate_params(first.params, 2000, 52)
    second = fit(ReturnSeries.from_values(y2), "sv0", cfg)
    se = standard_errors(first, s1, cfg)
    for k in ("phi", "sigma", "beta"):
        assert abs(getattr(first.params, k) - getattr(second.params, k)) < 3 * math.sqrt(2) * se[k]
