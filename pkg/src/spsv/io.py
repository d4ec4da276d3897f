"""CSV and JSON input/output for return series, reports and run manifests."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import platform
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .series import ReturnSeries

log = logging.getLogger(__name__)

PRICE_COLUMNS = ("adj close", "adj_close", "adjusted close", "adjusted_close", "adjclose",
                 "close", "price")
RETURN_COLUMNS = ("return", "returns", "log_return", "logreturn", "ret", "r", "y")
DATE_COLUMNS = ("date", "time", "timestamp")


class DataError(ValueError):
    """Raised for input files that cannot be turned into a return series."""


def _parse_float(text: str) -> Optional[float]:
    try:
        v = float(text)
    except (TypeError, ValueError):
        return None
    return v if math.isfinite(v) else None


def _parse_date(text: str, row: int) -> np.datetime64:
    try:
        return np.datetime64(dt.date.fromisoformat(text.strip()), "D")
    except ValueError as exc:
        raise DataError(f"row {row}: date {text!r} is not ISO-8601 (YYYY-MM-DD)") from exc


def _read_rows(path) -> tuple:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: file is empty")
    header = [h.strip().lower() for h in rows[0]]
    if len(rows) < 2:
        raise DataError(f"{path}: no data rows after the header")
    return header, rows[1:]


def _find(header, names) -> Optional[int]:
    for name in names:
        if name in header:
            return header.index(name)
    return None


def ingest_prices(csv_path) -> ReturnSeries:
    """Read a CSV of prices or returns and return the log-return series.

    A return column (``return``, ``log_return``, ``y``, ...) is used as is;
    otherwise a price column (``adj close``, ``close``, ``price``) is turned
    into log-returns, one fewer than the number of price rows.  Unparseable
    values become missing entries and are counted in a warning; a return is
    missing if either of its two prices is.  Row numbers in messages count
    the header as row 1.
    """
    header, rows = _read_rows(csv_path)
    date_col = _find(header, DATE_COLUMNS)
    ret_col = _find(header, RETURN_COLUMNS)
    price_col = _find(header, PRICE_COLUMNS) if ret_col is None else None
    if ret_col is None and price_col is None:
        raise DataError(f"{csv_path}: no price or return column in header {header}")
    col = ret_col if ret_col is not None else price_col

    values, dates, bad = [], [], []
    for k, row in enumerate(rows, start=2):
        cell = row[col] if col < len(row) else ""
        v = _parse_float(cell)
        if v is None:
            bad.append(k)
        values.append(math.nan if v is None else v)
        if date_col is not None:
            dates.append(_parse_date(row[date_col] if date_col < len(row) else "", k))
    values = np.array(values)
    if bad:
        log.warning("%d unparseable value(s) treated as missing (rows %s)", len(bad),
                    ", ".join(map(str, bad[:10])) + (" ..." if len(bad) > 10 else ""))
    date_arr = np.array(dates, dtype="datetime64[D]") if dates else None

    if ret_col is not None:
        return ReturnSeries.from_values(values, date_arr)

    valid = np.isfinite(values)
    nonpos = [k for k, v, ok in zip(range(2, len(values) + 2), values, valid) if ok and v <= 0]
    if nonpos:
        raise DataError(f"{csv_path}: nonpositive price(s) at row(s) {', '.join(map(str, nonpos))}")
    if valid.sum() < 2:
        raise DataError(f"{csv_path}: need at least 2 valid prices, found {int(valid.sum())}"
                        + (f" (unparseable rows {', '.join(map(str, bad))})" if bad else ""))
    with np.errstate(invalid="ignore"):
        r = np.diff(np.log(values))
    return ReturnSeries.from_values(r, date_arr[1:] if date_arr is not None else None)


def split_series(series: ReturnSeries, boundary: Union[int, str, np.datetime64]):
    """Split into (in-sample, out-of-sample) at an index or an ISO date.

    A date boundary puts every observation dated before it in the first part.
    """
    n = len(series)
    if isinstance(boundary, (int, np.integer)):
        k = int(boundary)
    else:
        if series.dates is None:
            raise ValueError("date boundary given but the series has no dates")
        d = np.datetime64(dt.date.fromisoformat(str(boundary)), "D") if isinstance(boundary, str) \
            else np.datetime64(boundary, "D")
        k = int(np.searchsorted(series.dates, d, side="left"))
    if not 0 < k < n:
        raise ValueError(f"split boundary {boundary!r} is not strictly inside the series (length {n})")
    return series[:k], series[k:]


def parse_boundary(text: str):
    """An integer index or an ISO date string."""
    try:
        return int(text)
    except ValueError:
        dt.date.fromisoformat(text)
        return text


def fmt(x) -> str:
    """Round-trip exact text for a float; empty for missing."""
    if x is None:
        return ""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _open_for_write(path, **kw):
    """Open ``path`` for writing, creating its directory only when output is produced."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", **kw)


def write_csv(path, header: Iterable[str], columns: Iterable) -> None:
    columns = [list(c) for c in columns]
    with _open_for_write(path, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in zip(*columns):
            w.writerow([c if isinstance(c, str) else fmt(c) if isinstance(c, (float, np.floating)) else str(c)
                        for c in row])


def write_rows(path, rows) -> None:
    with _open_for_write(path, newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def write_series_csv(path, series: ReturnSeries, g_true=None) -> None:
    """Write ``t,y[,g_true]`` (or ``date,y``); missing values are empty cells."""
    if series.dates is not None:
        first = ("date", [str(d) for d in series.dates])
    else:
        first = ("t", [str(i + 1) for i in range(len(series))])
    header, cols = [first[0], "y"], [first[1], [fmt(v) for v in series.values]]
    if g_true is not None:
        header.append("g_true")
        cols.append([fmt(v) for v in g_true])
    write_csv(path, header, cols)


def read_series_csv(path) -> ReturnSeries:
    """Inverse of :func:`write_series_csv`."""
    return ingest_prices(path)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> None:
    """JSON with round-trip exact floats (Python's shortest repr)."""
    with _open_for_write(path) as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def environment_info() -> dict:
    import numba
    import scipy

    from . import __version__
    return {"spsv": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "platform": platform.platform()}


def write_manifest(out_dir: Path, command: str, argv, config: dict, seed, outputs, summary=None) -> Path:
    from .simulation import RNG_ALGORITHM
    manifest = {"command": command, "argv": list(argv), "config": config, "seed": seed,
                "rng": RNG_ALGORITHM, "environment": environment_info(),
                "outputs": sorted(str(o) for o in outputs)}
    if summary is not None:
        manifest["summary"] = summary
    path = Path(out_dir) / "manifest.json"
    write_json(path, manifest)
    return path
