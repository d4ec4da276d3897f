"""Return series container with first-class missing values."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ReturnSeries:
    """Ordered log-returns.

    ``missing`` is True where the observation is absent; the corresponding
    entry of ``values`` carries no meaning (stored as NaN).
    """

    values: np.ndarray
    missing: np.ndarray
    dates: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        missing = np.asarray(self.missing, dtype=bool)
        if values.ndim != 1 or missing.shape != values.shape:
            raise ValueError("values and missing mask must be 1-d arrays of equal length")
        values = np.where(missing, np.nan, values)
        values.flags.writeable = False
        missing.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)
        if self.dates is not None:
            dates = np.asarray(self.dates)
            if dates.shape != values.shape:
                raise ValueError("dates must match values in length")
            object.__setattr__(self, "dates", dates)

    @classmethod
    def from_values(cls, values, dates=None) -> "ReturnSeries":
        """Build a series where non-finite entries are treated as missing."""
        values = np.asarray(values, dtype=float)
        return cls(values, ~np.isfinite(values), dates)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_observed(self) -> int:
        return int((~self.missing).sum())

    @property
    def observed(self) -> np.ndarray:
        return self.values[~self.missing]

    def mask(self, indices) -> "ReturnSeries":
        """Copy of the series with ``indices`` additionally marked missing."""
        missing = self.missing.copy()
        missing[np.asarray(indices, dtype=int)] = True
        return ReturnSeries(self.values, missing, self.dates)

    def __getitem__(self, item: slice) -> "ReturnSeries":
        if not isinstance(item, slice):
            raise TypeError("ReturnSeries supports slicing only")
        dates = None if self.dates is None else self.dates[item]
        return ReturnSeries(self.values[item], self.missing[item], dates)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReturnSeries):
            return NotImplemented
        same_dates = (self.dates is None and other.dates is None) or (
            self.dates is not None
            and other.dates is not None
            and np.array_equal(self.dates.astype(str), other.dates.astype(str))
        )
        return (
            np.array_equal(self.missing, other.missing)
            and np.array_equal(self.values[~self.missing], other.values[~other.missing])
            and same_dates
        )

    __hash__ = None


def concat(first: ReturnSeries, second: ReturnSeries) -> ReturnSeries:
    dates = None
    if first.dates is not None and second.dates is not None:
        dates = np.concatenate([first.dates, second.dates])
    return ReturnSeries(
        np.concatenate([first.values, second.values]),
        np.concatenate([first.missing, second.missing]),
        dates,
    )
