"""Discretization of the log-volatility state space.

The AR(1) log-volatility process is approximated on ``m`` equidistant cells
via the rectangular rule; the resulting transition "matrix" and initial
vector are the HMM analogues used by :mod:`spsv.hmm`.  Rows are deliberately
not renormalized.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

SIGMA_MIN = 1e-8
ROW_SUM_WARN = 1e-3

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class TruncationWarning(UserWarning):
    """The grid range truncates a noticeable share of the transition mass."""


@dataclass(frozen=True)
class VolatilityGrid:
    lower: float
    upper: float
    m: int

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise ValueError("grid bounds must be finite")
        if self.lower >= self.upper:
            raise ValueError(f"lower bound {self.lower} must be below upper bound {self.upper}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"cell count must be a positive integer, got {self.m}")
        object.__setattr__(self, "m", int(self.m))

    @property
    def width(self) -> float:
        return (self.upper - self.lower) / self.m

    @property
    def midpoints(self) -> np.ndarray:
        return self.lower + (np.arange(1, self.m + 1) - 0.5) * self.width


@dataclass(frozen=True)
class DiscreteStateModel:
    grid: VolatilityGrid
    transition: np.ndarray
    initial: np.ndarray


def build_grid(lower: float, upper: float, m: int) -> VolatilityGrid:
    return VolatilityGrid(float(lower), float(upper), m)


def _check(phi: float, sigma: float) -> None:
    if not abs(phi) < 1:
        raise ValueError(f"|phi| must be < 1 for stationarity, got {phi}")
    if not sigma >= SIGMA_MIN:
        raise ValueError(f"sigma must be >= {SIGMA_MIN}, got {sigma}")


def _log_normal_pdf(x, mean, sd):
    z = (x - mean) / sd
    return -0.5 * z * z - np.log(sd) - _LOG_SQRT_2PI


def build_transition(grid: VolatilityGrid, phi: float, sigma: float) -> np.ndarray:
    """Entry (i, j) is N(b_j*; phi * b_i*, sigma^2) times the cell width."""
    _check(phi, sigma)
    b = grid.midpoints
    return np.exp(_log_normal_pdf(b[None, :], phi * b[:, None], sigma)) * grid.width


def build_initial(grid: VolatilityGrid, phi: float, sigma: float) -> np.ndarray:
    """Stationary N(0, sigma^2 / (1 - phi^2)) density at the midpoints times the width."""
    _check(phi, sigma)
    sd = sigma / np.sqrt(1.0 - phi * phi)
    return np.exp(_log_normal_pdf(grid.midpoints, 0.0, sd)) * grid.width


def build_model(grid: VolatilityGrid, phi: float, sigma: float) -> DiscreteStateModel:
    """Transition and initial vector for ``grid``.

    Warns with :class:`TruncationWarning` when a row that carries stationary
    mass loses more than 1e-3 of its probability to the grid edges.  Rows far
    in the stationary tail are always truncated for persistent processes and
    are not reported.
    """
    omega = build_transition(grid, phi, sigma)
    delta = build_initial(grid, phi, sigma)
    relevant = delta >= 1e-6 * delta.max()
    row_sums = omega.sum(axis=1)
    if np.any(row_sums[relevant] < 1.0 - ROW_SUM_WARN) or delta.sum() < 1.0 - ROW_SUM_WARN:
        warnings.warn(
            f"grid [{grid.lower}, {grid.upper}] truncates the log-volatility law "
            f"(min relevant row sum {row_sums[relevant].min():.6f}, initial mass {delta.sum():.6f})",
            TruncationWarning,
            stacklevel=2,
        )
    omega.flags.writeable = False
    delta.flags.writeable = False
    return DiscreteStateModel(grid, omega, delta)


def transition_derivatives(grid: VolatilityGrid, omega: np.ndarray, phi: float, sigma: float):
    """Derivatives of the transition entries w.r.t. phi and log(sigma)."""
    b = grid.midpoints
    resid = b[None, :] - phi * b[:, None]
    d_phi = omega * resid * b[:, None] / sigma**2
    d_logsigma = omega * (resid**2 / sigma**2 - 1.0)
    return d_phi, d_logsigma


def initial_derivatives(grid: VolatilityGrid, delta: np.ndarray, phi: float, sigma: float):
    """Derivatives of the initial vector w.r.t. phi and log(sigma)."""
    b = grid.midpoints
    var = sigma**2 / (1.0 - phi**2)
    dlog_dvar = -0.5 / var + 0.5 * b**2 / var**2
    dvar_dphi = 2.0 * phi * sigma**2 / (1.0 - phi**2) ** 2
    return delta * dlog_dvar * dvar_dphi, delta * dlog_dvar * 2.0 * var
