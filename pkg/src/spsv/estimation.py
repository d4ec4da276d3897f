"""Maximum (penalized) likelihood estimation.

Parameters are optimized on an unconstrained scale:

    phi   <-> 2 * artanh(phi)        (phi = tanh(theta / 2), a shifted logistic)
    sigma <-> log(sigma)
    beta  <-> log(beta)              (SV0, SVt)
    nu    <-> log(nu - 2)            (SVt)
    logits: the 2K free logits, the central one pinned at zero (SVsp)

The objective is the penalized log-likelihood; its gradient is obtained
exactly from a scaled forward-backward pass, so a quasi-Newton method
(L-BFGS) is used with analytic derivatives.  Central finite differences are
available as a fallback and for checking.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import optimize

from . import grid as gridmod
from .hmm import forward, forward_backward_gradients
from .models import (NU_MIN, SV0Params, SVspParams, SVtParams, ModelParams, SplineEmission,
                     emission_matrix, parametric_emission_grad)
from .series import ReturnSeries
from .spline import (DEFAULT_DEGREE, DEFAULT_SPREAD, SUPPORT_SDS, PenaltyConfig, SplineBasis,
                     free_to_logits, logits_to_free, logits_to_weights, penalty_gradient,
                     penalty_value, scale_for_data)

log = logging.getLogger(__name__)

MIN_OBSERVATIONS = 50
NEG_CLAMP = -1e10
_PHI_THETA_MAX = 2.0 * math.atanh(1.0 - 1e-12)


@dataclass
class FitConfig:
    lower: float = -5.0
    upper: float = 5.0
    m: int = 100
    K: int = 15
    degree: int = DEFAULT_DEGREE
    spread: float = DEFAULT_SPREAD
    support_sds: float = SUPPORT_SDS
    scale: Optional[float] = None
    lam: float = 0.0
    order: int = 2
    n_starts: int = 5
    starts: Optional[list] = None
    seed: int = 0
    gtol: float = 1e-6
    ftol: float = 1e-12
    maxiter: int = 3000
    gradient: str = "analytic"
    gradient_tol: float = 1e-2
    sigma_floor: float = 0.75

    def __post_init__(self):
        if self.n_starts < 1 and not self.starts:
            raise ValueError("at least one start is required")
        if self.gtol <= 0 or self.ftol <= 0 or self.maxiter < 1:
            raise ValueError("optimizer tolerances must be positive")
        if self.gradient not in ("analytic", "numeric"):
            raise ValueError(f"gradient must be 'analytic' or 'numeric', got {self.gradient!r}")
        PenaltyConfig(self.lam, self.order)

    @property
    def grid(self) -> gridmod.VolatilityGrid:
        return gridmod.build_grid(self.lower, self.upper, self.m)

    @property
    def penalty(self) -> PenaltyConfig:
        return PenaltyConfig(self.lam, self.order)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["starts"] = None if self.starts is None else [p.to_dict() for p in self.starts]
        return out


@dataclass
class FitResult:
    params: ModelParams
    log_lik: float
    penalized_log_lik: float
    converged: bool
    n_evals: int
    start_index: int
    trace: list = field(default_factory=list)
    config: Optional[dict] = None

    @property
    def kind(self) -> str:
        return self.params.kind

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "log_lik": self.log_lik,
            "penalized_log_lik": self.penalized_log_lik,
            "converged": self.converged,
            "n_evals": self.n_evals,
            "start_index": self.start_index,
            "trace": self.trace,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FitResult":
        from .models import params_from_dict

        return cls(params_from_dict(data["params"]), float(data["log_lik"]),
                   float(data["penalized_log_lik"]), bool(data["converged"]),
                   int(data["n_evals"]), int(data["start_index"]),
                   list(data.get("trace", [])), data.get("config"))


# ---------------------------------------------------------------- transforms

def transform_params(params: ModelParams) -> np.ndarray:
    head = [2.0 * math.atanh(params.phi), math.log(params.sigma)]
    if params.kind == "sv0":
        return np.array(head + [math.log(params.beta)])
    if params.kind == "svt":
        return np.array(head + [math.log(params.beta), math.log(params.nu - NU_MIN)])
    return np.concatenate([head, logits_to_free(params.logits, params.basis.K)])


def untransform_params(theta, kind: str, basis: Optional[SplineBasis] = None) -> ModelParams:
    theta = np.asarray(theta, dtype=float)
    phi = math.tanh(0.5 * theta[0])
    sigma = math.exp(theta[1])
    if kind == "sv0":
        return SV0Params(phi, sigma, math.exp(theta[2]))
    if kind == "svt":
        return SVtParams(phi, sigma, math.exp(theta[2]), NU_MIN + math.exp(theta[3]))
    if kind == "svsp":
        if basis is None:
            raise ValueError("svsp parameters need a spline basis")
        return SVspParams(phi, sigma, basis, free_to_logits(theta[2:], basis.K))
    raise ValueError(f"unknown model kind {kind!r}")


# ----------------------------------------------------------------- objective

class Objective:
    """Penalized log-likelihood on the unconstrained scale, with gradient."""

    def __init__(self, series: ReturnSeries, kind: str, grid: gridmod.VolatilityGrid,
                 penalty: PenaltyConfig = PenaltyConfig(), basis: Optional[SplineBasis] = None):
        if kind not in ("sv0", "svt", "svsp"):
            raise ValueError(f"unknown model kind {kind!r}")
        self.series = series
        self.kind = kind
        self.grid = grid
        self.penalty = penalty if kind == "svsp" else PenaltyConfig(0.0, penalty.order)
        self.basis = basis
        self.n_evals = 0
        if kind == "svsp":
            if basis is None:
                raise ValueError("svsp objective needs a spline basis")
            self.spline = SplineEmission(basis, grid, series)

    @property
    def dim(self) -> int:
        return {"sv0": 3, "svt": 4}.get(self.kind, 2 + (self.basis.n_basis - 1 if self.basis else 0))

    def _unpack(self, theta):
        th0 = float(np.clip(theta[0], -_PHI_THETA_MAX, _PHI_THETA_MAX))
        phi = math.tanh(0.5 * th0)
        sigma = math.exp(float(np.clip(theta[1], -700.0, 50.0)))
        return phi, sigma

    def evaluate(self, theta, with_grad: bool = True):
        """Return ``(l_p, grad)``; ``grad`` is None when ``with_grad`` is False."""
        self.n_evals += 1
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            return -math.inf, (np.zeros_like(theta) if with_grad else None)
        phi, sigma = self._unpack(theta)
        if sigma < gridmod.SIGMA_MIN or abs(phi) >= 1.0:
            return -math.inf, (np.zeros_like(theta) if with_grad else None)
        omega = gridmod.build_transition(self.grid, phi, sigma)
        delta = gridmod.build_initial(self.grid, phi, sigma)
        if self.kind == "svsp":
            logits = free_to_logits(theta[2:], self.basis.K)
            a = logits_to_weights(logits)
            P = self.spline.emissions(a)
            pen = penalty_value(a, self.penalty)
            dP_extra = None
        else:
            if np.any(np.abs(theta[2:]) > 700):
                return -math.inf, (np.zeros_like(theta) if with_grad else None)
            beta = math.exp(theta[2])
            params = (SV0Params(phi, sigma, beta) if self.kind == "sv0"
                      else SVtParams(phi, sigma, beta, NU_MIN + math.exp(theta[3])))
            P, dP_extra = parametric_emission_grad(params, self.grid, self.series)
            pen = 0.0
        if not with_grad:
            ll = forward(delta, omega, P).log_likelihood
            return ll - pen, None
        ll, dP, domega, ddelta = forward_backward_gradients(delta, omega, P)
        if not np.isfinite(ll):
            return -math.inf, np.zeros_like(theta)
        grad = np.empty_like(theta)
        dom_phi, dom_ls = gridmod.transition_derivatives(self.grid, omega, phi, sigma)
        dde_phi, dde_ls = gridmod.initial_derivatives(self.grid, delta, phi, sigma)
        grad[0] = (np.sum(domega * dom_phi) + ddelta @ dde_phi) * 0.5 * (1.0 - phi * phi)
        grad[1] = np.sum(domega * dom_ls) + ddelta @ dde_ls
        if self.kind == "svsp":
            g_a = self.spline.weight_gradient(dP) - penalty_gradient(a, self.penalty)
            g_logits = a * (g_a - a @ g_a)
            K = self.basis.K
            grad[2:] = np.concatenate([g_logits[:K], g_logits[K + 1:]])
        else:
            with np.errstate(over="ignore", invalid="ignore"):
                for j, d in enumerate(dP_extra):
                    grad[2 + j] = np.sum(dP * d)
        if not np.all(np.isfinite(grad)):
            # scale factors near the underflow limit; let the optimizer back off
            return -math.inf, np.zeros_like(theta)
        return ll - pen, grad

    def value(self, theta) -> float:
        return self.evaluate(theta, with_grad=False)[0]

    def numeric_gradient(self, theta, h: float = 1e-5) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = np.empty_like(theta)
        for j in range(theta.shape[0]):
            e = np.zeros_like(theta)
            e[j] = h
            out[j] = (self.value(theta + e) - self.value(theta - e)) / (2 * h)
        return out

    def gradient(self, theta) -> np.ndarray:
        return self.evaluate(theta)[1]

    def penalized(self, params: ModelParams) -> tuple:
        """(log_lik, penalized log_lik) at natural-scale ``params``."""
        model = gridmod.DiscreteStateModel(
            self.grid,
            gridmod.build_transition(self.grid, params.phi, params.sigma),
            gridmod.build_initial(self.grid, params.phi, params.sigma),
        )
        P = emission_matrix(params, self.grid, self.series)
        ll = forward(model.initial, model.transition, P).log_likelihood
        pen = penalty_value(params.weights, self.penalty) if params.kind == "svsp" else 0.0
        return ll, ll - pen


def penalized_objective(theta, context: Objective) -> float:
    """l_p at unconstrained ``theta``; -inf is clamped to a large negative value."""
    value = context.value(theta)
    return value if np.isfinite(value) else NEG_CLAMP


# --------------------------------------------------------------------- starts

def moment_start(y, kind: str, basis: Optional[SplineBasis] = None) -> ModelParams:
    """Starting values from the autocovariances of log(y^2).

    For x_t = log(y_t^2) the lag-1 and lag-2 autocovariances are
    phi * Var(g) and phi^2 * Var(g).
    """
    y = np.asarray(y, dtype=float)
    y = y[np.isfinite(y)]
    sd = float(np.std(y))
    x = np.log(y**2 + 1e-4 * sd**2)
    x = x - x.mean()
    n = x.shape[0]
    c1 = float(x[1:] @ x[:-1]) / n
    c2 = float(x[2:] @ x[:-2]) / n
    phi, var_g = 0.95, 0.3
    if c1 > 0 and c2 > 0:
        phi = min(max(c2 / c1, 0.5), 0.995)
        var_g = min(max(c1 / phi, 0.05), 4.0)
    sigma = math.sqrt(var_g * (1.0 - phi**2))
    beta = sd * math.exp(-var_g / 4.0)
    if kind == "sv0":
        return SV0Params(phi, sigma, beta)
    if kind == "svt":
        nu = 8.0
        return SVtParams(phi, sigma, beta * math.sqrt((nu - 2.0) / nu), nu)
    return SVspParams(phi, sigma, basis, np.zeros(basis.n_basis))


def _starts(series: ReturnSeries, kind: str, config: FitConfig, basis) -> list:
    if config.starts:
        out = []
        for p in config.starts:
            if p.kind != kind:
                raise ValueError(f"start of kind {p.kind} given for a {kind} fit")
            if kind == "svsp" and p.basis != basis:
                p = SVspParams(p.phi, p.sigma, basis, _reproject_logits(p, basis))
            out.append(p)
        return out
    base = moment_start(series.observed, kind, basis)
    out = [base]
    if kind == "svsp":
        # the log(y^2) moments are noisy enough to start the spline fit in a
        # poor basin; a one-start normal fit gives far better (phi, sigma)
        try:
            pilot = fit(series, "sv0", replace(config, n_starts=1, starts=None)).params
            out = [SVspParams(pilot.phi, pilot.sigma, basis, np.zeros(basis.n_basis)), base]
        except RuntimeError:
            log.info("normal pilot fit failed; starting the spline fit from moments")
    rng = np.random.default_rng(config.seed)
    theta0 = transform_params(out[0])
    for _ in range(config.n_starts - len(out)):
        th = theta0.copy()
        th[0] += rng.normal(0.0, 0.6)
        th[1] += rng.normal(0.0, 0.4)
        if kind in ("sv0", "svt"):
            th[2] += rng.normal(0.0, 0.2)
        if kind == "svt":
            th[3] += rng.normal(0.0, 0.5)
        out.append(untransform_params(th, kind, basis))
    return out[:config.n_starts]


def _reproject_logits(p: SVspParams, basis: SplineBasis) -> np.ndarray:
    if p.basis.n_basis == basis.n_basis:
        return np.asarray(p.logits)
    return np.zeros(basis.n_basis)


# ------------------------------------------------------------------------ fit

def _bounds(objective: Objective, config: FitConfig) -> list:
    """Box on the unconstrained scale.

    sigma is kept above ``sigma_floor`` cell widths: for much smaller sigma the
    rectangular rule puts transition entries above one and the approximate
    likelihood diverges as sigma -> 0.
    """
    phi_max = 2.0 * math.atanh(1.0 - 1e-6)
    floor = config.sigma_floor * objective.grid.width
    out = [(-phi_max, phi_max), (math.log(floor), math.log(10.0))]
    if objective.kind in ("sv0", "svt"):
        out.append((-30.0, 10.0))
    if objective.kind == "svt":
        out.append((math.log(0.01), math.log(500.0)))
    if objective.kind == "svsp":
        out += [(-60.0, 60.0)] * (objective.basis.n_basis - 1)
    return out


def _projected_gradient(theta, grad, bounds) -> np.ndarray:
    g = np.array(grad, dtype=float)
    for j, (lo, hi) in enumerate(bounds):
        if (theta[j] <= lo + 1e-10 and g[j] < 0) or (theta[j] >= hi - 1e-10 and g[j] > 0):
            g[j] = 0.0
    return g


def _fit_logits(objective: Objective, theta0: np.ndarray, bounds, config: FitConfig) -> np.ndarray:
    """Optimize the spline logits with (phi, sigma) held at their start values."""
    head = theta0[:2]

    def fun(free):
        value, grad = objective.evaluate(np.concatenate([head, free]))
        if not np.isfinite(value):
            return -NEG_CLAMP, np.zeros_like(free)
        return -value, -grad[2:]

    res = optimize.minimize(fun, theta0[2:], jac=True, method="L-BFGS-B", bounds=bounds[2:],
                            options={"maxiter": config.maxiter, "gtol": config.gtol, "ftol": config.ftol})
    return np.concatenate([head, res.x])


def _optimize(objective: Objective, theta0: np.ndarray, config: FitConfig) -> dict:
    bounds = _bounds(objective, config)
    theta0 = np.clip(theta0, [b[0] for b in bounds], [b[1] for b in bounds])
    if objective.kind == "svsp" and theta0.shape[0] > 2:
        # shaping the density before moving the volatility parameters keeps the
        # joint search out of the near-unit-root basin a flat start invites
        theta0 = _fit_logits(objective, theta0, bounds, config)
    best = {"theta": theta0, "value": -math.inf}

    def fun(theta):
        if config.gradient == "analytic":
            value, grad = objective.evaluate(theta)
        else:
            value = objective.value(theta)
            grad = objective.numeric_gradient(theta) if np.isfinite(value) else np.zeros_like(theta)
        if not np.isfinite(value):
            return -NEG_CLAMP, np.zeros_like(theta)
        if value > best["value"]:
            best.update(theta=np.array(theta), value=value)
        return -value, -grad

    options = {"maxiter": config.maxiter, "gtol": config.gtol, "ftol": config.ftol, "maxcor": 20}
    res = optimize.minimize(fun, theta0, jac=True, method="L-BFGS-B", bounds=bounds, options=options)
    method = "L-BFGS-B"
    success = bool(res.success)
    nit = int(res.nit)
    if not success:
        # line-search breakdowns near the optimum are common at this objective
        # scale; restart with fresh curvature memory before going derivative-free
        res = optimize.minimize(fun, best["theta"], jac=True, method="L-BFGS-B", bounds=bounds,
                                options=options)
        nit += int(res.nit)
        method += "+restart"
        success = bool(res.success)
    if not success:
        _, g = objective.evaluate(best["theta"])
        if g is None or np.max(np.abs(_projected_gradient(best["theta"], g, bounds))) > config.gradient_tol:
            res = optimize.minimize(lambda th: -penalized_objective(th, objective), best["theta"],
                                    method="Nelder-Mead", bounds=bounds,
                                    options={"maxfev": 200 * len(theta0), "xatol": 1e-7,
                                             "fatol": 1e-9, "adaptive": True})
            value = -float(res.fun)
            if value > best["value"]:
                best.update(theta=np.array(res.x), value=value)
            method += "+Nelder-Mead"
    _, g = objective.evaluate(best["theta"])
    grad_norm = float(np.max(np.abs(_projected_gradient(best["theta"], g, bounds)))) if g is not None else math.inf
    at_bound = [j for j, (lo, hi) in enumerate(bounds[:2])
                if best["theta"][j] <= lo + 1e-8 or best["theta"][j] >= hi - 1e-8]
    return {"theta": best["theta"], "value": best["value"],
            "success": success or grad_norm <= config.gradient_tol,
            "nit": nit, "method": method, "grad_norm": grad_norm, "at_bound": at_bound}


def make_basis(series: ReturnSeries, config: FitConfig, widen: float = 1.0) -> SplineBasis:
    scale = config.scale
    if scale is None:
        scale = scale_for_data(series.observed, config.spread, config.support_sds)
    return SplineBasis(config.K, config.degree, scale * widen, config.spread)


def fit(series: ReturnSeries, kind: str, config: Optional[FitConfig] = None) -> FitResult:
    """Best local optimum of the penalized log-likelihood over several starts."""
    config = config or FitConfig()
    kind = kind.lower()
    if kind not in ("sv0", "svt", "svsp"):
        raise ValueError(f"unknown model kind {kind!r}")
    if series.n_observed < MIN_OBSERVATIONS:
        raise ValueError(f"need at least {MIN_OBSERVATIONS} observed returns, got {series.n_observed}")
    grid = config.grid
    widen = 1.0
    for attempt in range(4):
        basis = make_basis(series, config, widen) if kind == "svsp" else None
        objective = Objective(series, kind, grid, config.penalty, basis)
        starts = _starts(series, kind, config, basis)
        trace = []
        runs = []
        for i, start in enumerate(starts):
            run = _optimize(objective, transform_params(start), config)
            runs.append(run)
            trace.append({"start": i, "value": run["value"], "success": run["success"],
                          "nit": run["nit"], "method": run["method"],
                          "grad_norm": run["grad_norm"], "at_bound": run["at_bound"]})
            log.debug("start %d: l_p=%.6f success=%s", i, run["value"], run["success"])
        best = int(np.argmax([r["value"] for r in runs]))
        if np.isfinite(runs[best]["value"]) or kind != "svsp":
            break
        # observations fell outside the spline support for every state
        widen *= 2.0
        log.info("likelihood zero under current spline support; widening knots by 2")
    run = runs[best]
    if not np.isfinite(run["value"]):
        raise RuntimeError("likelihood is zero at every start; check the data and grid range")
    params = untransform_params(run["theta"], kind, basis)
    ll, lp = objective.penalized(params)
    return FitResult(params, ll, lp, run["success"], objective.n_evals, best, trace, config.to_dict())


# ---------------------------------------------------------- standard errors

def hessian(objective: Objective, theta, h: float = 1e-4) -> np.ndarray:
    """Symmetrized central-difference Hessian built from the analytic gradient."""
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[0]
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        H[j] = (objective.gradient(theta + e) - objective.gradient(theta - e)) / (2 * h)
    return 0.5 * (H + H.T)


def standard_errors(result: FitResult, series: ReturnSeries, config: Optional[FitConfig] = None) -> dict:
    """Delta-method standard errors of phi, sigma (and beta, nu) from the observed information."""
    config = config or FitConfig()
    params = result.params
    basis = params.basis if params.kind == "svsp" else None
    objective = Objective(series, params.kind, config.grid, config.penalty, basis)
    theta = transform_params(params)
    H = hessian(objective, theta)
    cov = np.linalg.pinv(-H)
    var = np.diag(cov)
    jac = [0.5 * (1 - params.phi**2), params.sigma]
    names = ["phi", "sigma"]
    if params.kind in ("sv0", "svt"):
        jac.append(params.beta)
        names.append("beta")
    if params.kind == "svt":
        jac.append(params.nu - NU_MIN)
        names.append("nu")
    return {n: float(abs(j) * math.sqrt(max(v, 0.0))) for n, j, v in zip(names, jac, var)}


# ------------------------------------------------------------------ bootstrap

@dataclass
class BootstrapResult:
    names: list
    samples: np.ndarray
    n_failed: int

    def sd(self) -> dict:
        return dict(zip(self.names, np.std(self.samples, axis=0, ddof=1)))


def scalar_params(params: ModelParams) -> dict:
    d = params.to_dict()
    return {k: d[k] for k in ("phi", "sigma", "beta", "nu") if k in d}


def _bootstrap_one(args):
    params, T, seed, config = args
    from .simulation import simulate_params

    y, _ = simulate_params(params, T, seed)
    series = ReturnSeries.from_values(y)
    try:
        res = fit(series, params.kind, config)
    except (ValueError, RuntimeError) as exc:
        return None, str(exc)
    if not res.converged:
        return None, "not converged"
    return scalar_params(res.params), None


def bootstrap(result: FitResult, series_length: int, B: int, config: Optional[FitConfig] = None,
              seed: int = 0, n_jobs: int = 1) -> BootstrapResult:
    """Parametric bootstrap: simulate ``B`` series from the fit and refit each.

    Refits start from the fitted parameters.  Failed or non-converged refits
    are excluded and counted.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if not result.converged:
        warnings.warn("bootstrapping a fit that did not converge", RuntimeWarning, stacklevel=2)
    config = config or FitConfig()
    config = replace(config, starts=[result.params], n_starts=1)
    seeds = np.random.SeedSequence(seed).spawn(B)
    jobs = [(result.params, series_length, s, config) for s in seeds]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            outs = list(pool.map(_bootstrap_one, jobs))
    else:
        outs = [_bootstrap_one(j) for j in jobs]
    good = [o for o, err in outs if o is not None]
    names = list(scalar_params(result.params))
    failed = B - len(good)
    if failed:
        log.warning("%d of %d bootstrap refits failed and were excluded", failed, B)
    samples = np.array([[g[n] for n in names] for g in good]).reshape(len(good), len(names))
    return BootstrapResult(names, samples, failed)
