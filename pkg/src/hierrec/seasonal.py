"""Seasonal-average forecasts and the matching in-sample residuals.

Time is absolute: row ``t`` of a training window starting at ``start`` is
observation ``start + t`` and belongs to stratum ``(start + t) % period``.
"""

from __future__ import annotations

import numpy as np

from hierrec.errors import InputError


def _window(history) -> np.ndarray:
    x = np.asarray(history, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise InputError("training window must be a non-empty (T x k) array")
    return x


def stratum_means(history, period: int, start: int = 0) -> np.ndarray:
    """(period x k) array of per-stratum means; errors on an empty stratum."""
    if period < 1:
        raise InputError("seasonal period must be >= 1")
    x = _window(history)
    strata = (start + np.arange(x.shape[0])) % period
    counts = np.bincount(strata, minlength=period)
    if np.any(counts == 0):
        raise InputError(f"empty seasonal stratum (counts {counts.tolist()})")
    sums = np.zeros((period, x.shape[1]))
    np.add.at(sums, strata, x)
    return sums / counts[:, None]


def seasonal_average_forecast(history, period: int, H: int, start: int = 0) -> np.ndarray:
    """(k x H) forecasts from the end of the window: stratum means of each target."""
    if H < 1:
        raise InputError("forecast horizon must be >= 1")
    x = _window(history)
    means = stratum_means(x, period, start)
    last = start + x.shape[0] - 1
    target_strata = (last + np.arange(1, H + 1)) % period
    return means[target_strata].T


def seasonal_residuals(history, period: int, start: int = 0) -> np.ndarray:
    """In-sample residuals of the seasonal-average fit (T x k)."""
    x = _window(history)
    means = stratum_means(x, period, start)
    strata = (start + np.arange(x.shape[0])) % period
    return x - means[strata]
