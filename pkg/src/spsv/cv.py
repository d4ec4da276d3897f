"""Cross-validated choice of the smoothing parameter.

Each of C random partitions splits the observations into a calibration part
and a validation part.  The model is fitted with the validation points
treated as missing, and scored by the log-likelihood of the validation
points with the calibration points treated as missing.  The lambda with the
highest mean score wins; exact ties go to the larger lambda.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .estimation import FitConfig, fit
from .hmm import forward
from .grid import build_initial, build_transition
from .models import emission_matrix
from .series import ReturnSeries

log = logging.getLogger(__name__)


@dataclass
class CVPlan:
    partitions: list
    calibration_fraction: float
    lambda_grid: list
    seed: int
    T: int

    def to_dict(self) -> dict:
        return {"partitions": [p.tolist() for p in self.partitions],
                "calibration_fraction": self.calibration_fraction,
                "lambda_grid": list(self.lambda_grid), "seed": self.seed, "T": self.T}


@dataclass
class CVReport:
    lambdas: list
    scores: np.ndarray  # (n_lambda, C); NaN where the calibration fit failed
    selected_lambda: float

    @property
    def mean_scores(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.nanmean(np.where(np.isnan(self.scores), np.nan, self.scores), axis=1)

    @property
    def n_missing(self) -> list:
        return np.isnan(self.scores).sum(axis=1).tolist()

    def to_dict(self) -> dict:
        return {"lambdas": list(self.lambdas), "mean_scores": self.mean_scores.tolist(),
                "scores": [[None if np.isnan(v) else v for v in row] for row in self.scores.tolist()],
                "n_missing": self.n_missing, "selected_lambda": self.selected_lambda}

    def csv_rows(self) -> list:
        header = ["lambda", "mean_score"] + [f"partition_{c}" for c in range(self.scores.shape[1])]
        rows = [header]
        for lam, mean, row in zip(self.lambdas, self.mean_scores, self.scores):
            rows.append([repr(float(lam)), repr(float(mean))] + ["" if np.isnan(v) else repr(float(v)) for v in row])
        return rows


def lambda_grid_pow2(r: int, s: int) -> list:
    """{2^n : n = r..s}."""
    if s < r:
        raise ValueError("empty lambda grid")
    return [float(2.0**n) for n in range(r, s + 1)]


def make_plan(T: int, C: int = 40, fraction: float = 0.9, lambda_grid: Sequence = (1024.0,),
              seed: int = 0) -> CVPlan:
    if C < 1:
        raise ValueError("need at least one partition")
    if not 0 < fraction < 1:
        raise ValueError(f"calibration fraction must lie in (0, 1), got {fraction}")
    lambda_grid = [float(v) for v in lambda_grid]
    if not lambda_grid or any(v < 0 for v in lambda_grid):
        raise ValueError("lambda grid must be nonempty and nonnegative")
    n_val = int(round((1.0 - fraction) * T))
    if n_val <= 0 or n_val >= T:
        raise ValueError(f"validation size {n_val} is degenerate for T={T}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    parts = [np.sort(rng.choice(T, n_val, replace=False)) for _ in range(C)]
    return CVPlan(parts, fraction, lambda_grid, seed, T)


def masked_log_likelihood(params, series: ReturnSeries, keep, config: FitConfig) -> float:
    """Log-likelihood of ``series`` with every index outside ``keep`` treated as missing."""
    keep = np.asarray(keep, dtype=int)
    mask = np.ones(len(series), dtype=bool)
    mask[keep] = False
    scored = ReturnSeries(series.values, series.missing | mask, series.dates)
    grid = config.grid
    P = emission_matrix(params, grid, scored)
    return forward(build_initial(grid, params.phi, params.sigma),
                   build_transition(grid, params.phi, params.sigma), P).log_likelihood


def cv_score(series: ReturnSeries, kind: str, lam: float, partition, config: Optional[FitConfig] = None):
    """Validation score for one partition, or None when the calibration fit fails."""
    config = config or FitConfig()
    partition = np.asarray(partition, dtype=int)
    if partition.size == 0:
        raise ValueError("validation set is empty")
    if partition.size >= len(series) or partition.min() < 0 or partition.max() >= len(series):
        raise ValueError("validation set must be a proper subset of the series indices")
    calib = series.mask(partition)
    try:
        result = fit(calib, kind, replace(config, lam=float(lam)))
    except (ValueError, RuntimeError) as exc:
        log.warning("calibration fit failed: %s", exc)
        return None
    if not result.converged:
        return None
    return masked_log_likelihood(result.params, series, partition, config)


def _job(args):
    series, kind, lam, part, config = args
    return cv_score(series, kind, lam, part, config)


def select_lambda(series: ReturnSeries, kind: str, plan: CVPlan, config: Optional[FitConfig] = None,
                  n_jobs: int = 1) -> CVReport:
    config = config or FitConfig()
    if plan.T != len(series):
        raise ValueError(f"plan built for T={plan.T}, series has {len(series)} observations")
    jobs = [(series, kind, lam, part, config) for lam in plan.lambda_grid for part in plan.partitions]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    scores = np.array([math.nan if r is None else r for r in results], dtype=float)
    scores = scores.reshape(len(plan.lambda_grid), len(plan.partitions))
    return _report(plan.lambda_grid, scores)


def _report(lambdas, scores: np.ndarray) -> CVReport:
    valid = ~np.all(np.isnan(scores), axis=1)
    if not valid.any():
        raise RuntimeError("every calibration fit failed; no lambda can be selected")
    for lam, n in zip(lambdas, np.isnan(scores).sum(axis=1)):
        if n:
            log.warning("lambda=%g: %d partition score(s) missing and excluded", lam, n)
    means = np.full(len(lambdas), -math.inf)
    means[valid] = np.nanmean(scores[valid], axis=1)
    best = means.max()
    selected = max(lam for lam, mu in zip(lambdas, means) if mu == best)
    return CVReport(list(lambdas), scores, float(selected))
