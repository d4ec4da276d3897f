"""Forward algorithm, gradients and Viterbi decoding for the discretized SV model.

The low-level routines work on an initial vector ``delta`` (m,), a transition
matrix ``omega`` (m, m) and an emission matrix ``P`` (T, m) whose row t is the
diagonal of P(y_t).  Nothing here assumes that ``omega`` is row-stochastic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

from .grid import DiscreteStateModel
from .models import ModelParams, emission_matrix
from .series import ReturnSeries


@dataclass
class ForwardResult:
    log_likelihood: float
    scaled_forward: np.ndarray
    log_scale_factors: np.ndarray
    predicted: np.ndarray

    @property
    def finite(self) -> bool:
        return np.isfinite(self.log_likelihood)


@dataclass
class DecodedPath:
    states: np.ndarray  # zero-based grid indices
    log_joint: float


# Subnormal transition entries slow the recursions by ~4x; their contribution
# is far below double-precision resolution of any likelihood.
_FLUSH = 1e-280


def _flushed(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, order="C")
    a[a < _FLUSH] = 0.0
    return a


def _forward_loop(delta, omega, P, alpha, pred, logc):
    T, m = P.shape
    q = delta.copy()
    for t in range(T):
        c = 0.0
        for j in range(m):
            pred[t, j] = q[j]
            c += q[j] * P[t, j]
        if not (c > 0.0 and c < np.inf):
            return t
        logc[t] = np.log(c)
        for j in range(m):
            alpha[t, j] = q[j] * P[t, j] / c
        for j in range(m):
            q[j] = 0.0
        for i in range(m):
            a = alpha[t, i]
            for j in range(m):
                q[j] += a * omega[i, j]
    return T


def _backward_loop(omega_t, P, c, beta, weighted):
    # omega_t is the transposed transition matrix (contiguous columns)
    T, m = P.shape
    for j in range(m):
        beta[T - 1, j] = 1.0
    for t in range(T - 1, 0, -1):
        for j in range(m):
            weighted[t, j] = P[t, j] * beta[t, j] / c[t]
            beta[t - 1, j] = 0.0
        for j in range(m):
            w = weighted[t, j]
            for i in range(m):
                beta[t - 1, i] += omega_t[j, i] * w
    for j in range(m):
        weighted[0, j] = P[0, j] * beta[0, j] / c[0]


if numba is not None:
    _forward_loop = numba.njit(cache=False)(_forward_loop)
    _backward_loop = numba.njit(cache=False)(_backward_loop)


def forward(delta: np.ndarray, omega: np.ndarray, P: np.ndarray) -> ForwardResult:
    """Scaled forward recursion.

    Row t of ``scaled_forward`` is the forward vector normalized to sum one and
    ``predicted[t]`` is the un-normalized one-step prediction
    (``delta`` for t = 0, ``alpha_{t-1} @ omega`` afterwards) that multiplies
    the emissions at time t.  A zero scale factor stops the recursion and
    yields a log-likelihood of ``-inf``; later rows are NaN.
    """
    P = np.ascontiguousarray(P, dtype=float)
    omega = _flushed(omega)
    delta = _flushed(delta)
    T, m = P.shape
    alpha = np.full((T, m), np.nan)
    pred = np.full((T, m), np.nan)
    logc = np.full(T, -np.inf)
    done = _forward_loop(delta, omega, P, alpha, pred, logc)
    if done < T:
        alpha[done:] = np.nan
        return ForwardResult(-math.inf, alpha, logc, pred)
    return ForwardResult(math.fsum(logc), alpha, logc, pred)


def forward_backward_gradients(delta: np.ndarray, omega: np.ndarray, P: np.ndarray):
    """Log-likelihood and its gradients w.r.t. the emissions, ``omega`` and ``delta``.

    Returns ``(loglik, dP, domega, ddelta)``; gradients are None when the
    likelihood is zero.
    """
    fw = forward(delta, omega, P)
    if not fw.finite:
        return fw.log_likelihood, None, None, None
    T, m = P.shape
    c = np.exp(fw.log_scale_factors)
    beta = np.empty((T, m))
    weighted = np.empty((T, m))
    _backward_loop(_flushed(omega.T), np.ascontiguousarray(P, dtype=float),
                   c, beta, weighted)
    with np.errstate(over="ignore", invalid="ignore"):
        dP = fw.predicted * (beta / c[:, None])
    domega = fw.scaled_forward[:-1].T @ weighted[1:]
    ddelta = weighted[0]
    return fw.log_likelihood, dP, domega, ddelta


def viterbi(delta: np.ndarray, omega: np.ndarray, P: np.ndarray) -> DecodedPath:
    """Most likely state path in log space; ties go to the lower index."""
    T, m = P.shape
    with np.errstate(divide="ignore"):
        log_omega = np.log(omega)
        log_p = np.log(P)
        score = np.log(delta) + log_p[0]
    back = np.zeros((T, m), dtype=int)
    for t in range(1, T):
        cand = score[:, None] + log_omega
        back[t] = np.argmax(cand, axis=0)
        score = cand[back[t], np.arange(m)] + log_p[t]
    states = np.empty(T, dtype=int)
    states[-1] = int(np.argmax(score))
    for t in range(T - 1, 0, -1):
        states[t - 1] = back[t, states[t]]
    return DecodedPath(states, float(score[states[-1]]))


def log_likelihood(model: DiscreteStateModel, params: ModelParams, series: ReturnSeries) -> float:
    """log of delta P(y_1) Omega P(y_2) ... Omega P(y_T) 1."""
    if len(series) == 0:
        raise ValueError("series is empty")
    P = emission_matrix(params, model.grid, series)
    return forward(model.initial, model.transition, P).log_likelihood


def forward_filter(model: DiscreteStateModel, params: ModelParams, series: ReturnSeries) -> ForwardResult:
    if len(series) == 0:
        raise ValueError("series is empty")
    P = emission_matrix(params, model.grid, series)
    return forward(model.initial, model.transition, P)


def viterbi_decode(model: DiscreteStateModel, params: ModelParams, series: ReturnSeries) -> DecodedPath:
    if len(series) == 0:
        raise ValueError("series is empty")
    P = emission_matrix(params, model.grid, series)
    return viterbi(model.initial, model.transition, P)
