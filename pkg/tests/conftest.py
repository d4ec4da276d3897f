"""Shared oracles: brute-force enumeration and independent density evaluation.

Nothing here calls into the package's recursions; the oracles rebuild every
quantity from scipy.stats and itertools so the tests compare two independent
computations.
"""

import itertools
import math

import numpy as np
import pytest
from scipy import stats
from scipy.interpolate import BSpline

from spsv.models import SV0Params, SVspParams, SVtParams
from spsv.spline import build_basis


def oracle_grid(lower, upper, m):
    width = (upper - lower) / m
    return np.array([lower + (i + 0.5) * width for i in range(m)]), width


def oracle_chain(lower, upper, m, phi, sigma):
    """Initial vector and transition matrix from scipy.stats.norm, entry by entry."""
    b, w = oracle_grid(lower, upper, m)
    sd0 = sigma / math.sqrt(1 - phi * phi)
    delta = np.array([stats.norm.pdf(bi, 0.0, sd0) * w for bi in b])
    omega = np.array([[stats.norm.pdf(bj, phi * bi, sigma) * w for bj in b] for bi in b])
    return delta, omega


def oracle_spline_density(basis, weights, x):
    """Mixture density from scipy's B-spline elements, standardized by quadrature."""
    d = basis.degree
    t = basis.knots
    out = np.zeros_like(np.asarray(x, dtype=float))
    for k, a in enumerate(weights):
        kn = t[k:k + d + 2]
        elem = BSpline.basis_element(kn, extrapolate=False)
        mass = elem.integrate(kn[0], kn[-1])
        v = np.nan_to_num(elem(x))
        out = out + a * v / mass
    return out


def oracle_density(params, y, g):
    """Conditional density of y given g from first principles."""
    s = math.exp(-g / 2)
    if params.kind == "sv0":
        return stats.norm.pdf(y * s / params.beta) * s / params.beta
    if params.kind == "svt":
        return stats.t.pdf(y * s / params.beta, params.nu) * s / params.beta
    return s * float(oracle_spline_density(params.basis, params.weights, np.array([y * s]))[0])


def oracle_emissions(params, b, y):
    """T x m emission matrix; None in ``y`` marks a missing value."""
    return np.array([[1.0 if v is None else oracle_density(params, v, bi) for bi in b] for v in y])


def brute_likelihood(delta, omega, P):
    """Sum over all m^T state paths of the joint density."""
    T, m = P.shape
    total = 0.0
    for path in itertools.product(range(m), repeat=T):
        w = delta[path[0]] * P[0, path[0]]
        for t in range(1, T):
            w *= omega[path[t - 1], path[t]] * P[t, path[t]]
        total += w
    return total


def brute_filter(delta, omega, P, t):
    """P(state at t | y_1..y_t) by enumeration of paths up to t."""
    m = P.shape[1]
    num = np.zeros(m)
    for path in itertools.product(range(m), repeat=t + 1):
        w = delta[path[0]] * P[0, path[0]]
        for s in range(1, t + 1):
            w *= omega[path[s - 1], path[s]] * P[s, path[s]]
        num[path[-1]] += w
    return num / num.sum()


def brute_viterbi(delta, omega, P):
    T, m = P.shape
    best, arg = -math.inf, None
    for path in itertools.product(range(m), repeat=T):
        w = delta[path[0]] * P[0, path[0]]
        for t in range(1, T):
            w *= omega[path[t - 1], path[t]] * P[t, path[t]]
        if w > best:
            best, arg = w, path
    return np.array(arg), best


def random_params(kind, rng, K=3, scale=0.5):
    phi = rng.uniform(-0.95, 0.98)
    sigma = rng.uniform(0.1, 0.8)
    if kind == "sv0":
        return SV0Params(phi, sigma, rng.uniform(0.5, 2.0))
    if kind == "svt":
        return SVtParams(phi, sigma, rng.uniform(0.5, 2.0), rng.uniform(2.5, 30))
    basis = build_basis(K, 3, scale)
    return SVspParams(phi, sigma, basis, rng.normal(0, 1, basis.n_basis))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def report_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
