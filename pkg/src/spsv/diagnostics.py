"""Forecast pseudo-residuals, normality checks, predictive scores and decoding."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from . import grid as gridmod
from .hmm import forward, forward_filter, viterbi_decode
from .models import ModelParams, conditional_cdf, emission_matrix
from .series import ReturnSeries

RESIDUAL_CLAMP = 8.0


@dataclass
class PseudoResiduals:
    cdf: np.ndarray
    values: np.ndarray
    clamped: np.ndarray

    def observed(self) -> np.ndarray:
        return self.values[np.isfinite(self.values)]


@dataclass
class ScoreReport:
    model: str
    in_sample_log_lik: float
    out_of_sample_log_lik: float
    full_log_lik: float
    split_index: int
    jb_statistic: Optional[float]
    jb_p_value: Optional[float]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class DecodedVolatility:
    states: np.ndarray
    log_vol: np.ndarray
    vol: np.ndarray


def model_for(params: ModelParams, grid: gridmod.VolatilityGrid) -> gridmod.DiscreteStateModel:
    return gridmod.build_model(grid, params.phi, params.sigma)


def grid_from_config(config: Optional[dict]) -> gridmod.VolatilityGrid:
    config = config or {}
    return gridmod.build_grid(config.get("lower", -5.0), config.get("upper", 5.0), config.get("m", 100))


def _mixing_weights(model: gridmod.DiscreteStateModel, params: ModelParams, series: ReturnSeries):
    """One-step predictive state weights; rows after a zero-likelihood step are NaN."""
    return forward_filter(model, params, series).predicted


def predictive_cdf(model: gridmod.DiscreteStateModel, params: ModelParams, series: ReturnSeries,
                   t: int, clip: bool = True) -> float:
    """F(y_t | y_1..y_{t-1}) under the discretized model; ``t`` is zero-based.

    The mixing weights are the filtered forward vector at t - 1 propagated
    through the transition matrix; at t = 0 the initial vector is used.
    On coarse grids the weights need not sum to one exactly; ``clip=False``
    returns the raw mixture value.
    """
    if not 0 <= t < len(series):
        raise IndexError(f"t={t} outside series of length {len(series)}")
    if series.missing[t]:
        return math.nan
    zeta = _mixing_weights(model, params, series[: t + 1])[t]
    if not np.all(np.isfinite(zeta)):
        raise FloatingPointError(f"an earlier observation has zero likelihood; F(y_{t}) is undefined")
    F = conditional_cdf(params, series.values[t], model.grid.midpoints)
    value = float(zeta @ F)
    return float(np.clip(value, 0.0, 1.0)) if clip else value


def pseudo_residuals(model: gridmod.DiscreteStateModel, params: ModelParams,
                     series: ReturnSeries) -> PseudoResiduals:
    """One-step-ahead forecast pseudo-residuals for every observed t.

    CDF values of exactly 0 or 1 map to -/+8 and are flagged in ``clamped``.
    Missing observations give NaN, as do all times after an observation of
    zero likelihood (the filter cannot be carried past it).
    """
    if len(series) < 2:
        raise ValueError("need at least two observations")
    zeta = _mixing_weights(model, params, series)
    obs = ~series.missing & np.all(np.isfinite(zeta), axis=1)
    cdf = np.full(len(series), np.nan)
    F = conditional_cdf(params, series.values[obs][:, None], model.grid.midpoints[None, :])
    cdf[obs] = np.clip(np.sum(zeta[obs] * F, axis=1), 0.0, 1.0)
    with np.errstate(divide="ignore"):
        values = special.ndtri(cdf)
    clamped = np.isinf(values)
    if not np.all(np.isfinite(zeta)):
        warnings.warn("zero likelihood at some step; later residuals are undefined (NaN)",
                      RuntimeWarning, stacklevel=2)
    values = np.clip(values, -RESIDUAL_CLAMP, RESIDUAL_CLAMP)
    return PseudoResiduals(cdf, values, clamped)


def jarque_bera(residuals) -> tuple:
    """JB = n/6 (S^2 + (K - 3)^2 / 4) with a chi-square(2) tail p-value."""
    x = np.asarray(residuals, dtype=float)
    x = x[np.isfinite(x)]
    n = x.shape[0]
    if n < 8:
        raise ValueError(f"Jarque-Bera needs at least 8 values, got {n}")
    c = x - x.mean()
    m2 = np.mean(c**2)
    if m2 == 0:
        raise ValueError("residuals are constant")
    skew = np.mean(c**3) / m2**1.5
    kurt = np.mean(c**4) / m2**2
    stat = jb_from_moments(n, skew, kurt)
    return stat, float(math.exp(-0.5 * stat))


def jb_from_moments(n: int, skewness: float, kurtosis: float) -> float:
    return float(n / 6.0 * (skewness**2 + (kurtosis - 3.0) ** 2 / 4.0))


def qq_points(residuals) -> tuple:
    """(theoretical N(0,1) quantiles, sorted sample quantiles)."""
    r = np.sort(np.asarray(residuals, dtype=float)[np.isfinite(residuals)])
    n = r.shape[0]
    return special.ndtri((np.arange(1, n + 1) - 0.5) / n), r


def oos_score(fitted, full_series: ReturnSeries, split_index: int,
              grid: Optional[gridmod.VolatilityGrid] = None) -> ScoreReport:
    """Out-of-sample log-likelihood score conditional on the in-sample history.

    ``fitted`` is a FitResult (its grid settings are reused) or a parameter
    set.  Computed from one forward pass: the in-sample part is the sum of
    the log scale factors before ``split_index`` and the score is the
    remainder.
    """
    params = getattr(fitted, "params", fitted)
    if grid is None and getattr(fitted, "config", None):
        grid = grid_from_config(fitted.config)
    if not 0 < split_index <= len(full_series):
        raise ValueError(f"split index {split_index} outside (0, {len(full_series)}]")
    grid = grid or gridmod.build_grid(-5.0, 5.0, 100)
    model = model_for(params, grid)
    P = emission_matrix(params, grid, full_series)
    fw = forward(model.initial, model.transition, P)
    logc = fw.log_scale_factors
    ins = math.fsum(logc[:split_index])
    out = math.fsum(logc[split_index:]) if split_index < len(full_series) else 0.0
    jb = (None, None)
    if len(full_series) - split_index >= 8 and fw.finite:
        res = pseudo_residuals(model, params, full_series)
        tail = res.values[split_index:]
        if np.isfinite(tail).sum() >= 8:
            jb = jarque_bera(tail)
    full = ins + out if fw.finite else fw.log_likelihood
    return ScoreReport(params.kind, ins, out, full, split_index, jb[0], jb[1])


def decode_volatility(model: gridmod.DiscreteStateModel, params: ModelParams,
                      series: ReturnSeries) -> DecodedVolatility:
    path = viterbi_decode(model, params, series)
    g = model.grid.midpoints[path.states]
    return DecodedVolatility(path.states, g, np.exp(0.5 * g))


def uniformity_discrepancy(cdf_values) -> float:
    """Anderson-Darling statistic of CDF values against U(0, 1)."""
    u = np.sort(np.clip(np.asarray(cdf_values, dtype=float)[np.isfinite(cdf_values)], 1e-15, 1 - 1e-15))
    n = u.shape[0]
    i = np.arange(1, n + 1)
    return float(-n - np.mean((2 * i - 1) * (np.log(u) + np.log1p(-u[::-1]))))
