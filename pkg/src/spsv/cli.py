"""Command-line interface: simulate, fit, cv, diagnose, decode and score.

Every command writes its artifacts plus ``manifest.json`` into ``--out``.
Options can also come from a JSON file given with ``--config``; flags given
on the command line override the file.  Errors are reported as a JSON
object on stderr; usage errors exit with status 2, runtime errors with 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .cv import make_plan, select_lambda
from .estimation import FitConfig, FitResult, fit
from .grid import build_grid
from .io import (DataError, ingest_prices, parse_boundary, read_json, split_series, write_csv,
                 write_json, write_manifest, write_rows, write_series_csv)
from .models import SV0Params, SVtParams
from .series import ReturnSeries
from .simulation import SimSpec, simulate, true_density
from .spline import density_eval

EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_lambda_grid(text: str) -> list:
    """``256..8192x2`` (powers of two) or a comma list ``1,10,100``."""
    text = str(text).strip()
    if ".." in text:
        lo, _, rest = text.partition("..")
        hi, _, step = rest.partition("x")
        lo, hi, step = float(lo), float(hi), float(step or 2)
        if lo <= 0 or hi < lo or step <= 1:
            raise UsageError(f"bad lambda grid {text!r}")
        out, v = [], lo
        while v <= hi * (1 + 1e-12):
            out.append(v)
            v *= step
        return out
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad lambda grid {text!r}") from exc


# Defaults live here rather than in argparse so that the config file can sit
# between them and the explicit flags.
DEFAULTS = {
    "out": ".", "seed": 0, "model": "svsp", "lam": 0.0, "K": 15, "degree": 3, "m": 100,
    "range": [-5.0, 5.0], "starts": 5, "order": 2, "split": None, "t": 4000, "design": None,
    "phi": 0.98, "sigma": 0.1, "beta": 0.03, "nu": 10.0, "burn_in": 0, "partitions": 40,
    "calib_frac": 0.9, "lambda_grid": "256..8192x2", "jobs": 1, "fit": None, "data": None,
}


def _common(p, data=True):
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--out", help="output directory (default: current)")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    if data:
        p.add_argument("--data", help="CSV with a price or return column")
        p.add_argument("--split", help="index or ISO date; data before it is in-sample")


def _fit_options(p):
    p.add_argument("--model", choices=["sv0", "svt", "svsp"])
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--k", dest="K", type=int, help="basis has 2K+1 densities")
    p.add_argument("--degree", type=int)
    p.add_argument("--order", type=int, help="difference order of the penalty")
    p.add_argument("--m", type=int, help="number of volatility grid cells")
    p.add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"))
    p.add_argument("--starts", type=int, help="number of optimizer starts")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spsv", description="Semiparametric stochastic volatility models")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="simulate a return series")
    _common(p, data=False)
    p.add_argument("--design", type=int, choices=[1, 2])
    p.add_argument("--model", choices=["sv0", "svt"])
    p.add_argument("--t", type=int, help="series length")
    p.add_argument("--burn-in", dest="burn_in", type=int)
    for name in ("phi", "sigma", "beta", "nu"):
        p.add_argument(f"--{name}", type=float)

    p = sub.add_parser("fit", help="fit a model")
    _common(p)
    _fit_options(p)

    p = sub.add_parser("cv", help="cross-validate the smoothing parameter")
    _common(p)
    _fit_options(p)
    p.add_argument("--partitions", type=int)
    p.add_argument("--calib-frac", dest="calib_frac", type=float)
    p.add_argument("--lambda-grid", dest="lambda_grid")
    p.add_argument("--jobs", type=int)

    for name, text in (("diagnose", "forecast pseudo-residuals"), ("decode", "Viterbi volatility path"),
                       ("score", "out-of-sample log-likelihood score")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--fit", help="fit.json from a previous fit")
    return parser


def resolve(argv) -> tuple:
    """Parse argv and merge defaults < config file < explicit flags."""
    ns = build_parser().parse_args(argv)
    opts = dict(DEFAULTS)
    if ns.config:
        try:
            with open(ns.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        opts.update(cfg)
    for key, value in vars(ns).items():
        if value is not None and key not in ("config", "verbose", "command"):
            opts[key] = value
    return ns.command, opts, ns.verbose


def _fit_config(opts) -> FitConfig:
    lo, hi = opts["range"]
    if not lo < hi:
        raise UsageError("--range needs LO < HI")
    try:
        return FitConfig(lower=float(lo), upper=float(hi), m=int(opts["m"]), K=int(opts["K"]),
                         degree=int(opts["degree"]), lam=float(opts["lam"]), order=int(opts["order"]),
                         n_starts=int(opts["starts"]), seed=int(opts["seed"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_data(opts) -> ReturnSeries:
    if not opts["data"]:
        raise UsageError("--data is required")
    return ingest_prices(opts["data"])


def _in_sample(series, opts):
    if opts["split"] is None:
        return series, None
    boundary = parse_boundary(str(opts["split"]))
    first, _ = split_series(series, boundary)
    return first, len(first)


def _load_fit(opts) -> FitResult:
    if not opts["fit"]:
        raise UsageError("--fit is required")
    return FitResult.from_dict(read_json(opts["fit"]))


def _fit_grid(result: FitResult):
    cfg = result.config or {}
    return build_grid(cfg.get("lower", -5.0), cfg.get("upper", 5.0), cfg.get("m", 100))


def _density_columns(params, n=2001):
    if params.kind == "svsp":
        lo, hi = params.basis.support
        x = np.linspace(lo, hi, n)
        return x, density_eval(params.basis, params.weights, x)
    half = 12 * params.beta
    x = np.linspace(-half, half, n)
    # conditional density at g = 0 is the innovation density
    from .models import conditional_density
    return x, conditional_density(params, x, 0.0)


def _index_column(series: ReturnSeries, offset=0):
    if series.dates is not None:
        return "date", [str(d) for d in series.dates]
    return "t", [str(i + 1 + offset) for i in range(len(series))]


def _write_residuals(out, series, res, offset=0):
    name, idx = _index_column(series, offset)
    write_csv(out / "residuals.csv", [name, "cdf", "residual"], [idx, res.cdf, res.values])
    theo, emp = diag.qq_points(res.values)
    write_csv(out / "qq.csv", ["theoretical", "sample"], [theo, emp])
    return ["residuals.csv", "qq.csv"]


def cmd_simulate(opts, out: Path):
    if opts["design"] is not None:
        spec = SimSpec(int(opts["t"]), design=int(opts["design"]), burn_in=int(opts["burn_in"]),
                       seed=int(opts["seed"]))
    else:
        kind = opts.get("model") if opts.get("model") in ("sv0", "svt") else "sv0"
        params = (SV0Params(opts["phi"], opts["sigma"], opts["beta"]) if kind == "sv0"
                  else SVtParams(opts["phi"], opts["sigma"], opts["beta"], opts["nu"]))
        spec = SimSpec(int(opts["t"]), params=params, burn_in=int(opts["burn_in"]), seed=int(opts["seed"]))
    y, g = simulate(spec)
    write_series_csv(out / "series.csv", ReturnSeries.from_values(y), g)
    outputs = ["series.csv"]
    if spec.design is not None:
        pdf, _ = true_density(spec.design)
        x = np.linspace(-0.3, 0.3, 2001)
        write_csv(out / "true_density.csv", ["x", "f_eps"], [x, pdf(x)])
        outputs.append("true_density.csv")
    summary = {"T": spec.T, "y_sd": float(np.std(y)), "g_sd": float(np.std(g))}
    print(f"simulated T={spec.T}  sd(y)={summary['y_sd']:.6g}  sd(g)={summary['g_sd']:.6g}")
    return outputs, summary


def cmd_fit(opts, out: Path):
    series, split = _in_sample(_load_data(opts), opts)
    config = _fit_config(opts)
    result = fit(series, opts["model"], config)
    write_json(out / "fit.json", result.to_dict())
    x, f = _density_columns(result.params)
    write_csv(out / "density.csv", ["x", "f_eps_hat"], [x, f])
    p = result.params
    print(f"model={p.kind}  phi={p.phi:.6g}  sigma={p.sigma:.6g}  logL={result.log_lik:.6g}"
          f"  penalized={result.penalized_log_lik:.6g}  converged={result.converged}")
    summary = {"log_lik": result.log_lik, "converged": result.converged, "n_in_sample": len(series)}
    return ["fit.json", "density.csv"], summary


def cmd_cv(opts, out: Path):
    series, _ = _in_sample(_load_data(opts), opts)
    config = _fit_config(opts)
    grid = _parse_lambda_grid(opts["lambda_grid"])
    if not grid:
        raise UsageError("empty lambda grid")
    try:
        plan = make_plan(len(series), int(opts["partitions"]), float(opts["calib_frac"]), grid,
                         int(opts["seed"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report = select_lambda(series, opts["model"], plan, config, int(opts["jobs"]))
    data = report.to_dict()
    data["plan"] = plan.to_dict()
    write_json(out / "cv.json", data)
    write_rows(out / "cv_scores.csv", report.csv_rows())
    for lam, mu in zip(report.lambdas, report.mean_scores):
        print(f"lambda={lam:<10.6g} mean score={mu:.6g}")
    print(f"selected lambda={report.selected_lambda:.6g}")
    return ["cv.json", "cv_scores.csv"], {"selected_lambda": report.selected_lambda}


def cmd_diagnose(opts, out: Path):
    series = _load_data(opts)
    result = _load_fit(opts)
    model = diag.model_for(result.params, _fit_grid(result))
    res = diag.pseudo_residuals(model, result.params, series)
    outputs = _write_residuals(out, series, res)
    stat, p = diag.jarque_bera(res.values)
    print(f"Jarque-Bera={stat:.6g}  p={p:.6g}  clamped={int(res.clamped.sum())}")
    return outputs, {"jb_statistic": stat, "jb_p_value": p, "n_clamped": int(res.clamped.sum())}


def cmd_decode(opts, out: Path):
    series = _load_data(opts)
    result = _load_fit(opts)
    model = diag.model_for(result.params, _fit_grid(result))
    dec = diag.decode_volatility(model, result.params, series)
    name, idx = _index_column(series)
    write_csv(out / "decoded.csv", [name, "g_hat", "vol_hat"], [idx, dec.log_vol, dec.vol])
    print(f"decoded {len(series)} states; mean vol_hat={float(np.mean(dec.vol)):.6g}")
    return ["decoded.csv"], {"mean_vol_hat": float(np.mean(dec.vol))}


def cmd_score(opts, out: Path):
    series = _load_data(opts)
    result = _load_fit(opts)
    if opts["split"] is None:
        raise UsageError("--split is required for score")
    first, _ = split_series(series, parse_boundary(str(opts["split"])))
    k = len(first)
    report = diag.oos_score(result, series, k)
    write_json(out / "scores.json", report.to_dict())
    outputs = ["scores.json"]
    model = diag.model_for(result.params, _fit_grid(result))
    res = diag.pseudo_residuals(model, result.params, series)
    tail = diag.PseudoResiduals(res.cdf[k:], res.values[k:], res.clamped[k:])
    outputs += _write_residuals(out, series[k:], tail, offset=k)
    print(f"model={report.model}  out-of-sample logL={report.out_of_sample_log_lik:.6g}"
          f"  in-sample logL={report.in_sample_log_lik:.6g}")
    return outputs, report.to_dict()


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "cv": cmd_cv, "diagnose": cmd_diagnose,
            "decode": cmd_decode, "score": cmd_score}


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        command, opts, verbose = resolve(argv)
        logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        out = Path(opts["out"])
        outputs, summary = COMMANDS[command](opts, out)
        write_manifest(out, command, argv, opts, opts["seed"], outputs + ["manifest.json"], summary)
    except UsageError as exc:
        return _error("usage", str(exc), EXIT_USAGE)
    except (DataError, ValueError, RuntimeError, OSError, FloatingPointError) as exc:
        return _error(type(exc).__name__, str(exc), EXIT_RUNTIME)
    return 0


if __name__ == "__main__":
    sys.exit(main())
