"""Conditional return distributions for the three SV model families.

Each family supplies the state-dependent factor

    f(y | g) = exp(-g/2) * f_eps(y * exp(-g/2))

that fills the diagonal emission matrices of the discretized likelihood.

* ``SV0``: f_eps is N(0, beta^2).
* ``SVt``: f_eps is beta times an (unstandardized) Student-t with ``nu`` dof,
  so Var(y | g) = beta^2 * nu / (nu - 2) * exp(g).
* ``SVsp``: f_eps is a penalized B-spline mixture (see :mod:`spsv.spline`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import sparse, special, stats

from .grid import SIGMA_MIN, VolatilityGrid
from .series import ReturnSeries
from .spline import SplineBasis, logits_to_weights, density_eval, density_cdf

MODEL_KINDS = ("sv0", "svt", "svsp")
NU_MIN = 2.0

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _check_common(phi, sigma):
    if not abs(phi) < 1:
        raise ValueError(f"|phi| must be < 1, got {phi}")
    if not sigma >= SIGMA_MIN:
        raise ValueError(f"sigma must be >= {SIGMA_MIN}, got {sigma}")


@dataclass(frozen=True)
class SV0Params:
    phi: float
    sigma: float
    beta: float
    kind: str = field(default="sv0", init=False)

    def __post_init__(self):
        _check_common(self.phi, self.sigma)
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    def to_dict(self) -> dict:
        return {"model": self.kind, "phi": self.phi, "sigma": self.sigma, "beta": self.beta}


@dataclass(frozen=True)
class SVtParams:
    phi: float
    sigma: float
    beta: float
    nu: float
    kind: str = field(default="svt", init=False)

    def __post_init__(self):
        _check_common(self.phi, self.sigma)
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.nu > NU_MIN:
            raise ValueError(f"nu must exceed {NU_MIN}, got {self.nu}")

    def to_dict(self) -> dict:
        return {"model": self.kind, "phi": self.phi, "sigma": self.sigma,
                "beta": self.beta, "nu": self.nu}


@dataclass(frozen=True, eq=False)
class SVspParams:
    phi: float
    sigma: float
    basis: SplineBasis
    logits: np.ndarray
    kind: str = field(default="svsp", init=False)

    def __post_init__(self):
        _check_common(self.phi, self.sigma)
        logits = np.asarray(self.logits, dtype=float)
        if logits.shape != (self.basis.n_basis,):
            raise ValueError(f"expected {self.basis.n_basis} logits, got shape {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        logits = logits - logits[self.basis.K]
        logits.flags.writeable = False
        object.__setattr__(self, "logits", logits)

    @property
    def weights(self) -> np.ndarray:
        return logits_to_weights(self.logits)

    def to_dict(self) -> dict:
        return {"model": self.kind, "phi": self.phi, "sigma": self.sigma,
                "basis": self.basis.to_dict(), "logits": self.logits.tolist()}


ModelParams = Union[SV0Params, SVtParams, SVspParams]


def params_from_dict(data: dict) -> ModelParams:
    kind = data.get("model")
    if kind == "sv0":
        return SV0Params(float(data["phi"]), float(data["sigma"]), float(data["beta"]))
    if kind == "svt":
        return SVtParams(float(data["phi"]), float(data["sigma"]), float(data["beta"]), float(data["nu"]))
    if kind == "svsp":
        return SVspParams(float(data["phi"]), float(data["sigma"]),
                          SplineBasis.from_dict(data["basis"]), np.asarray(data["logits"], dtype=float))
    raise ValueError(f"unknown model tag {kind!r}; expected one of {MODEL_KINDS}")


def _t_logpdf(z, nu):
    return (special.gammaln(0.5 * (nu + 1)) - special.gammaln(0.5 * nu)
            - 0.5 * np.log(nu * np.pi) - 0.5 * (nu + 1) * np.log1p(z * z / nu))


def conditional_density(params: ModelParams, y, g):
    """Density of y given log-volatility g."""
    y = np.asarray(y, dtype=float)
    g = np.asarray(g, dtype=float)
    s = np.exp(-0.5 * g)
    if params.kind == "sv0":
        z = y * s / params.beta
        out = np.exp(-0.5 * z * z - _LOG_SQRT_2PI) * s / params.beta
    elif params.kind == "svt":
        z = y * s / params.beta
        out = np.exp(_t_logpdf(z, params.nu)) * s / params.beta
    else:
        out = s * density_eval(params.basis, params.weights, y * s)
    out = np.asarray(out)
    return out[()] if out.ndim == 0 else out


def conditional_cdf(params: ModelParams, y, g):
    """P(Y <= y | g) for each family."""
    y = np.asarray(y, dtype=float)
    s = np.exp(-0.5 * np.asarray(g, dtype=float))
    if params.kind == "sv0":
        out = special.ndtr(y * s / params.beta)
    elif params.kind == "svt":
        out = stats.t.cdf(y * s / params.beta, params.nu)
    else:
        out = density_cdf(params.basis, params.weights, y * s)
    out = np.asarray(out)
    return out[()] if out.ndim == 0 else out


def emission_diag(params: ModelParams, grid: VolatilityGrid, y) -> np.ndarray:
    """Diagonal of P(y) over the grid; all ones for a missing observation."""
    if y is None or not np.isfinite(y):
        return np.ones(grid.m)
    return np.asarray(conditional_density(params, float(y), grid.midpoints), dtype=float)


def emission_matrix(params: ModelParams, grid: VolatilityGrid, series: ReturnSeries) -> np.ndarray:
    """T x m matrix of emission diagonals, missing rows set to one."""
    obs = ~series.missing
    out = np.ones((len(series), grid.m))
    y = series.values[obs]
    if params.kind == "svsp":
        out[obs] = SplineEmission(params.basis, grid, series).emissions(params.weights)[obs]
    else:
        out[obs] = conditional_density(params, y[:, None], grid.midpoints[None, :])
    return out


def parametric_emission_grad(params: ModelParams, grid: VolatilityGrid, series: ReturnSeries):
    """Emission matrix and its derivatives w.r.t. log(beta) (and log(nu - 2) for SVt).

    Returns ``(p, [dp/dlogbeta, ...])``; missing rows have p = 1 and zero derivatives.
    """
    obs = ~series.missing
    T, m = len(series), grid.m
    p = np.ones((T, m))
    y = series.values[obs][:, None]
    s = np.exp(-0.5 * grid.midpoints)[None, :]
    z = y * s / params.beta
    if params.kind == "sv0":
        logp = -0.5 * z * z - _LOG_SQRT_2PI + np.log(s / params.beta)
        dlog_beta = z * z - 1.0
        extra = []
    elif params.kind == "svt":
        nu = params.nu
        logp = _t_logpdf(z, nu) + np.log(s / params.beta)
        z2 = z * z
        dlog_beta = (nu + 1.0) * z2 / (nu + z2) - 1.0
        dlog_nu = (0.5 * special.digamma(0.5 * (nu + 1)) - 0.5 * special.digamma(0.5 * nu)
                   - 0.5 / nu - 0.5 * np.log1p(z2 / nu) + 0.5 * (nu + 1.0) * z2 / (nu * (nu + z2)))
        extra = [dlog_nu * (nu - NU_MIN)]
    else:
        raise ValueError("parametric_emission_grad applies to sv0/svt only")
    pobs = np.exp(logp)
    p[obs] = pobs
    grads = []
    for d in [dlog_beta] + extra:
        full = np.zeros((T, m))
        full[obs] = pobs * d
        grads.append(full)
    return p, grads


class SplineEmission:
    """Precomputed basis tensor for SVsp emissions.

    Entry ((t, i), k) is exp(-b_i/2) * psi_k(y_t * exp(-b_i/2)), stored sparse,
    so the T x m emission matrix is linear in the mixture weights.  Missing
    observations get identically one.
    """

    def __init__(self, basis: SplineBasis, grid: VolatilityGrid, series: ReturnSeries):
        self.basis = basis
        self.grid = grid
        self.shape = (len(series), grid.m)
        self.observed = ~series.missing
        y = np.where(self.observed, series.values, 0.0)
        s = np.exp(-0.5 * grid.midpoints)
        x = (y[:, None] * s[None, :]).ravel()
        design = basis.design(x, fmt="sparse")
        row_scale = np.tile(s, len(series)) * np.repeat(self.observed, grid.m)
        self.tensor = sparse.csr_matrix(sparse.diags(row_scale) @ design)
        self._ones = np.repeat(~self.observed, grid.m).astype(float)

    def emissions(self, weights) -> np.ndarray:
        return (self.tensor @ np.asarray(weights, dtype=float) + self._ones).reshape(self.shape)

    def weight_gradient(self, d_emission: np.ndarray) -> np.ndarray:
        """Pull back d(objective)/d(emission) to d(objective)/d(weights)."""
        return self.tensor.T @ d_emission.ravel()
