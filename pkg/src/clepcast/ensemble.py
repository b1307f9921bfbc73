"""CLEP: exponentially weighted combination of predictor forecasts.

Each predictor's weight for a county decays with its recent losses,

    w_m  proportional to  exp(-c (1 - mu) * sum_i mu^(t - i) * loss_i^m),

summed over the last ``window`` days, where ``loss_i^m`` compares the
``loss_horizon``-day-ahead forecast for day ``i`` with the count observed
on day ``i``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

TRANSFORMS = ("sqrt", "log1p")


@dataclass(frozen=True)
class WeightConfig:
    c: float = 1.0
    mu: float = 0.5
    window: int = 7
    loss_horizon: int = 3
    transform: str = "sqrt"

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not 0 < self.mu < 1:
            raise ValueError("mu must lie in (0, 1)")
        if self.window < 1 or self.loss_horizon < 1:
            raise ValueError("window and loss_horizon must be >= 1")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"transform must be one of {TRANSFORMS}")


def forecast_loss(yhat, y, transform: str = "sqrt") -> np.ndarray:
    """Absolute error on the square-root (default) or log1p scale."""
    yhat = np.maximum(np.asarray(yhat, dtype=float), 0.0)
    y = np.maximum(np.asarray(y, dtype=float), 0.0)
    if transform == "sqrt":
        return np.abs(np.sqrt(yhat) - np.sqrt(y))
    if transform == "log1p":
        return np.abs(np.log1p(yhat) - np.log1p(y))
    raise ValueError(f"unknown transform {transform!r}")


class LossHistory:
    """Append-only store of per-day losses, one ``(n_counties, n_days)`` array per predictor.

    Missing entries are NaN.
    """

    def __init__(self, n_counties: int, n_days: int, predictors: Sequence[str]):
        self.predictors = tuple(predictors)
        self.n_counties = n_counties
        self.n_days = n_days
        self._loss = {m: np.full((n_counties, n_days), np.nan) for m in self.predictors}

    def record(self, predictor: str, day: int, losses) -> None:
        losses = np.asarray(losses, dtype=float)
        if np.any(losses < 0):
            raise ValueError("losses must be non-negative")
        self._loss[predictor][:, day] = losses

    def get(self, predictor: str) -> np.ndarray:
        return self._loss[predictor]

    def window(self, t: int, width: int) -> np.ndarray:
        """Losses for days ``t-width+1 .. t`` as ``(n_counties, n_predictors, width)``.

        Columns are ordered oldest first; days before 0 are NaN.
        """
        out = np.full((self.n_counties, len(self.predictors), width), np.nan)
        lo = t - width + 1
        src_lo = max(lo, 0)
        for j, m in enumerate(self.predictors):
            out[:, j, src_lo - lo :] = self._loss[m][:, src_lo : t + 1]
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "LossHistory":
        names = list(arrays)
        first = np.asarray(arrays[names[0]])
        hist = cls(first.shape[0], first.shape[1], names)
        for m in names:
            hist._loss[m][:] = np.asarray(arrays[m], dtype=float)
        return hist


def weight_exponents(losses, config: WeightConfig) -> np.ndarray:
    """Exponents ``-c (1-mu) sum mu^(t-i) loss_i`` for losses ordered oldest first.

    `losses` has the day axis last; NaN (missing) terms contribute zero.
    """
    losses = np.asarray(losses, dtype=float)
    width = losses.shape[-1]
    decay = config.mu ** np.arange(width - 1, -1, -1, dtype=float)
    total = np.nansum(losses * decay, axis=-1)
    return -config.c * (1.0 - config.mu) * total


def softmax_weights(exponents) -> np.ndarray:
    """Normalise exponents along the last axis, shifting by the max first."""
    e = np.asarray(exponents, dtype=float)
    finite = np.isfinite(e)
    bad = ~finite.any(axis=-1)
    if bad.any():
        logger.warning("%d counties have no finite weight exponent; using uniform weights", int(bad.sum()))
    safe = np.where(finite, e, -np.inf)
    shift = np.max(np.where(finite, e, -np.inf), axis=-1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    w = np.exp(safe - shift)
    w = np.where(bad[..., None], 1.0, w)
    return w / w.sum(axis=-1, keepdims=True)


def clep_weights(history: LossHistory, t: int, config: WeightConfig | None = None) -> np.ndarray:
    """Per-county weights ``(n_counties, n_predictors)`` to apply on day ``t+1``.

    Uses losses for days ``t - window + 1 .. t``. Missing days count as zero
    loss, so early in a run the weights rest on whatever history exists.
    """
    config = config or WeightConfig()
    losses = history.window(t, config.window)
    missing = np.isnan(losses)
    if missing.any():
        logger.debug("day %d: %d missing loss entries treated as zero", t, int(missing.sum()))
    return softmax_weights(weight_exponents(losses, config))


def clep_predict(forecasts: Sequence[np.ndarray], weights) -> np.ndarray:
    """Weighted average of member forecasts.

    `forecasts` holds one ``(n_counties, K)`` array per member and `weights` is
    ``(n_counties, n_members)``. Entries that are NaN in a member are left out
    and the remaining weights renormalised.
    """
    F = np.stack([np.asarray(f, dtype=float) for f in forecasts], axis=1)  # (C, M, K)
    w = np.asarray(weights, dtype=float)
    if w.ndim == 1:
        w = np.broadcast_to(w, F.shape[:2])
    present = ~np.isnan(F)
    if not present.all():
        logger.warning("some member forecasts are missing; renormalising CLEP weights")
    ww = np.where(present, w[:, :, None], 0.0)
    denom = ww.sum(axis=1)
    num = np.where(present, F, 0.0) * ww
    with np.errstate(invalid="ignore", divide="ignore"):
        return num.sum(axis=1) / denom
