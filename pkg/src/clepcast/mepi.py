"""Maximum-absolute-error prediction intervals and the exchangeability check."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


def normalized_error(y, yhat):
    """``|y / max(yhat, 1) - 1|``; works elementwise on arrays."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    out = np.abs(y / np.maximum(yhat, 1.0) - 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PredictionInterval:
    lower: float
    upper: float
    n_errors: int = 5
    cold_start: bool = False
    unusable: bool = False

    def __contains__(self, y) -> bool:
        return self.lower <= y <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


def mepi_bounds(yhat, delta_max, y_last=None, clamp: bool = True):
    """Vectorised interval ``[yhat (1 - d), yhat (1 + d)]``.

    With ``clamp`` the lower bound is raised to the last observed count.
    """
    yhat = np.asarray(yhat, dtype=float)
    d = np.asarray(delta_max, dtype=float)
    lower = yhat * (1.0 - d)
    upper = yhat * (1.0 + d)
    if clamp:
        if y_last is None:
            raise ValueError("clamped intervals need the last observed value")
        lower = np.maximum(lower, np.asarray(y_last, dtype=float))
        upper = np.maximum(upper, lower)
    return lower, upper


def mepi_interval(yhat: float, deltas, y_last: float | None = None, clamp: bool = True, window: int = 5):
    """Interval around one forecast from its recent normalised errors.

    `deltas` are the most recent errors for the same horizon (NaN entries are
    ignored). Fewer than `window` of them marks the interval as a cold start;
    none at all gives a zero-width interval flagged unusable.
    """
    d = np.asarray(deltas, dtype=float)
    d = d[~np.isnan(d)][-window:] if d.size else d
    if d.size == 0:
        centre = max(yhat, y_last) if (clamp and y_last is not None) else yhat
        return PredictionInterval(centre, centre, 0, cold_start=True, unusable=True)
    lo, hi = mepi_bounds(yhat, d.max(), y_last, clamp)
    return PredictionInterval(float(lo), float(hi), int(d.size), cold_start=d.size < window)


class ErrorStore:
    """Normalised errors keyed by horizon: ``errors[k][county, target_day]``."""

    def __init__(self, n_counties: int, n_days: int, horizons):
        self.horizons = tuple(horizons)
        self._err = {k: np.full((n_counties, n_days), np.nan) for k in self.horizons}

    def record(self, k: int, day: int, deltas) -> None:
        self._err[k][:, day] = deltas

    def get(self, k: int) -> np.ndarray:
        return self._err[k]

    def recent(self, k: int, t: int, window: int = 5) -> np.ndarray:
        """Errors for days ``t-window+1 .. t``, ``(n_counties, window)``."""
        arr = self._err[k]
        lo = t - window + 1
        out = np.full((arr.shape[0], window), np.nan)
        src = max(lo, 0)
        out[:, src - lo :] = arr[:, src : t + 1]
        return out

    def delta_max(self, k: int, t: int, window: int = 5):
        """Max over the window and the count of errors it used, per county."""
        rec = self.recent(k, t, window)
        n = (~np.isnan(rec)).sum(axis=1)
        with np.errstate(invalid="ignore"):
            dmax = np.where(n > 0, np.nanmax(np.where(np.isnan(rec), -np.inf, rec), axis=1), np.nan)
        return dmax, n


def error_tuples(series, k: int, window: int = 5) -> np.ndarray:
    """Six-slot tuples ``(D[t+k], D[t], D[t-1], ..., D[t-4])`` from one error series.

    Only days where every slot is available are kept.
    """
    s = np.asarray(series, dtype=float)
    rows = []
    for t in range(window - 1, len(s) - k):
        tup = np.concatenate([[s[t + k]], s[t - window + 1 : t + 1][::-1]])
        if not np.isnan(tup).any():
            rows.append(tup)
    return np.array(rows).reshape(-1, window + 1)


def rank_diagnostic(tuples) -> np.ndarray:
    """Average within-tuple rank of each slot (ties share the mean rank).

    Under exchangeability every slot averages ``(n_slots + 1) / 2``.
    """
    tuples = np.atleast_2d(np.asarray(tuples, dtype=float))
    if tuples.shape[0] == 0:
        raise ValueError("need at least one complete error tuple")
    ranks = rankdata(tuples, method="average", axis=1)
    return ranks.mean(axis=0)


def simulate_coverage(n_steps: int, window: int = 5, rng=None, sampler=None) -> float:
    """Coverage of unclamped intervals on i.i.d. normalised errors.

    A step is covered unless its error is the maximum of itself and the
    preceding `window` errors, i.e. it lands outside ``[yhat (1-d), yhat (1+d)]``.
    """
    rng = np.random.default_rng(rng)
    sampler = sampler or (lambda n: rng.exponential(size=n))
    errs = np.asarray(sampler(n_steps + window), dtype=float)
    dmax = np.lib.stride_tricks.sliding_window_view(errs[:-1], window).max(axis=1)
    cur = errs[window:]
    yhat = 100.0
    # realised observation sits at the error's distance from the forecast,
    # alternating above and below it
    sign = np.where(np.arange(n_steps) % 2, 1.0, -1.0)
    y = yhat * (1.0 + sign * cur)
    lo, hi = mepi_bounds(np.full(n_steps, yhat), dmax, clamp=False)
    return float(np.mean((lo <= y) & (y <= hi)))
