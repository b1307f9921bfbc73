"""The five county-level death predictors and their post-processing.

All predictors take a panel, an as-of day offset ``t`` (data through the end
of day ``t``) and a horizon ``K`` and return predicted cumulative deaths for
days ``t+1 .. t+K``. Separate predictors fit one small model per county; the
shared family pools every county past its third death into one Poisson GLM.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .glm import FitConfig, GlmFit, Standardization, fit_ols, fit_poisson_glm, standardize
from .ingest import CountyPanel

logger = logging.getLogger(__name__)

# Exponent guard for recursive plug-in; exp(40) is far beyond any real count.
MAX_LOG_PRED = 40.0


class InsufficientDataError(ValueError):
    """Not enough pooled rows to fit a shared predictor."""


class PredictorKind(str, enum.Enum):
    SEPARATE_EXPONENTIAL = "separate"
    SEPARATE_LINEAR = "linear"
    SHARED = "shared"
    EXPANDED_SHARED = "expanded_shared"
    DEMOGRAPHICS_SHARED = "demographics"

    @classmethod
    def parse(cls, name: str) -> "PredictorKind":
        name = name.strip().lower().replace("-", "_")
        aliases = {"expanded": "expanded_shared", "demographics_shared": "demographics", "exponential": "separate"}
        return cls(aliases.get(name, name))


@dataclass(frozen=True)
class PredictorOptions:
    exp_window: int = 5
    min_exp_days: int = 3
    linear_window: int = 4
    weekday_linear_window: int = 7
    pool_threshold: int = 3  # pooled fits start at a county's third death
    weekday: bool = False
    social_distancing: bool = False
    social_lag: int = 14
    social_penalty: float = 0.01
    fit: FitConfig = field(default_factory=FitConfig)


def enforce_monotonicity(predictions, last_observed) -> np.ndarray:
    """Running maximum over horizons, anchored at the last observed count.

    Works on a 1-d vector of horizons or on a ``(n_counties, K)`` matrix with
    one last observation per row.
    """
    p = np.asarray(predictions, dtype=float)
    last = np.asarray(last_observed, dtype=float)
    if p.ndim == 1:
        return np.maximum.accumulate(np.concatenate([[float(last)], p]))[1:]
    stacked = np.column_stack([last.reshape(-1), p])
    return np.maximum.accumulate(stacked, axis=1)[:, 1:]


# --- separate-county predictors -------------------------------------------

def fit_predict_separate_exponential(series, K: int, options: PredictorOptions | None = None):
    """Per-county Poisson fit of deaths on time over the trailing window.

    `series` is the county's cumulative deaths through the as-of day. Returns
    ``(predictions, flag)`` where flag is ``""`` for a real fit, or names the
    fallback that produced a flat forecast at the last value.
    """
    options = options or PredictorOptions()
    y = np.asarray(series, dtype=float)
    last = y[-1] if len(y) else 0.0
    flat = np.full(K, last)
    nz = np.flatnonzero(y > 0)
    if len(nz) == 0:
        return flat, "no_data"
    start = max(len(y) - options.exp_window, int(nz[0]))
    window = y[start:]
    if len(window) < options.min_exp_days:
        return flat, "short_window"
    if np.all(window == window[0]):
        return flat, "constant"
    tt = np.arange(len(window), dtype=float)
    fit = fit_poisson_glm(tt[:, None], window, options.fit)
    if fit.diverged:
        return flat, "diverged"
    future = len(window) - 1 + np.arange(1, K + 1, dtype=float)
    eta = np.minimum(fit.intercept + fit.coef[0] * future, MAX_LOG_PRED)
    return np.exp(eta), ""


def weekday_indicator(panel: CountyPanel, days) -> np.ndarray:
    """1.0 where the day offset falls on a Sunday or Monday."""
    days = np.asarray(days)
    base = panel.start.weekday()  # Monday == 0
    wd = (base + days) % 7
    return ((wd == 6) | (wd == 0)).astype(float)


def fit_predict_separate_linear(series, K: int, window: int = 4, weekday_flags=None):
    """OLS line through the trailing `window` days, extrapolated ``K`` steps.

    With `weekday_flags` (a 0/1 vector covering the series then the ``K``
    future days) a Sunday/Monday indicator column is added to the fit.
    Returns ``(predictions, flag)``; predictions may be negative before the
    monotonicity pass.
    """
    y = np.asarray(series, dtype=float)
    last = y[-1] if len(y) else 0.0
    L = min(window, len(y))
    if L < 2:
        return np.full(K, last), "short_window"
    w = y[-L:]
    tt = np.arange(L, dtype=float)
    future = L - 1 + np.arange(1, K + 1, dtype=float)
    if weekday_flags is None:
        fit = fit_ols(tt, w)
        return fit.predict(future), ""
    v = np.asarray(weekday_flags, dtype=float)
    n = len(y)
    X = np.column_stack([tt, v[n - L : n]])
    fit = fit_ols(X, w)
    Xf = np.column_stack([future, v[n : n + K]])
    return fit.predict(Xf), "rank_deficient" if fit.rank_deficient else ""


# --- shared family ----------------------------------------------------------

@dataclass
class PooledModel:
    """A fitted shared-family GLM plus what is needed to recurse with it.

    The first ``n_scaled`` design columns pass through ``scaler``; indicator
    columns after them enter as raw 0/1 values.
    """

    kind: PredictorKind
    fit: GlmFit
    scaler: Standardization
    n_scaled: int
    horizon: int = 1
    n_rows: int = 0
    columns: tuple[str, ...] = ()

    def eta(self, raw) -> np.ndarray:
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        z = raw.copy()
        z[:, : self.n_scaled] = self.scaler.apply(raw[:, : self.n_scaled])
        return self.fit.linear_predictor(z)

    def step(self, raw) -> np.ndarray:
        return np.exp(np.minimum(self.eta(raw), MAX_LOG_PRED))


def pooled_rows(panel: CountyPanel, t: int, threshold: int = 3, min_day: int = 1):
    """(county index, response day) pairs for the pooled design.

    A row uses response day ``s`` and the previous day's deaths, and exists
    when day ``s - 1`` is on or after the county's ``threshold``-th death,
    ``s <= t`` and ``s >= min_day``.
    """
    d = panel.deaths[:, : t + 1]
    reached = d >= threshold
    has = reached.any(axis=1)
    first = np.where(has, reached.argmax(axis=1), d.shape[1] + 1)
    days = np.arange(d.shape[1])
    mask = (days[None, :] >= first[:, None] + 1) & (days[None, :] >= max(min_day, 1))
    ci, si = np.nonzero(mask)
    return ci, si


def _indicator_block(panel, ci, days, options: PredictorOptions, interventions) -> tuple[np.ndarray, list[str]]:
    cols, names = [], []
    if options.social_distancing:
        cols.append(social_distancing_indicator(interventions, ci, days, options.social_lag))
        names.append("social_distancing")
    if options.weekday:
        cols.append(weekday_indicator(panel, days))
        names.append("weekday")
    if not cols:
        return np.zeros((len(ci), 0)), names
    return np.column_stack(cols), names


def social_distancing_indicator(intervention_days, ci, days, lag: int = 14) -> np.ndarray:
    """1.0 once at least `lag` days have passed since the county's intervention.

    `intervention_days` holds one day offset per county, NaN when unknown
    (indicator stays 0).
    """
    if intervention_days is None:
        return np.zeros(len(ci))
    start = np.asarray(intervention_days, dtype=float)[ci]
    with np.errstate(invalid="ignore"):
        return (np.asarray(days, dtype=float) >= start + lag).astype(float)


def augment_indicator_features(panel, ci, days, options: PredictorOptions, interventions=None):
    """Indicator columns (social distancing, weekday) for the given rows.

    Returns ``(matrix, names)``; the matrix has zero columns when both flags
    are off.
    """
    return _indicator_block(panel, np.asarray(ci), np.asarray(days), options, interventions)


def _fit_pooled(kind, Xs, Xi, y, options: PredictorOptions, names, horizon=1, fit_config=None) -> PooledModel:
    if len(y) < 2:
        raise InsufficientDataError(f"insufficient pooled data for {kind.value} ({len(y)} rows)")
    Z, scaler = standardize(Xs)
    design = np.column_stack([Z, Xi]) if Xi.shape[1] else Z
    fit = fit_poisson_glm(design, y, fit_config or options.fit)
    return PooledModel(kind, fit, scaler, Xs.shape[1], horizon, len(y), tuple(names))


def fit_shared(panel: CountyPanel, t: int, options: PredictorOptions | None = None) -> PooledModel:
    options = options or PredictorOptions()
    ci, si = pooled_rows(panel, t, options.pool_threshold)
    Xs = np.log1p(panel.deaths[ci, si - 1].astype(float))[:, None]
    y = panel.deaths[ci, si].astype(float)
    return _fit_pooled(PredictorKind.SHARED, Xs, np.zeros((len(y), 0)), y, options, ("log_deaths",))


def predict_shared(model: PooledModel, panel: CountyPanel, t: int, K: int, rows=None) -> np.ndarray:
    """Recursive plug-in forecasts, ``(n_rows, K)``."""
    rows = np.arange(panel.n_counties) if rows is None else np.asarray(rows)
    x = np.log1p(panel.deaths[rows, t].astype(float))
    out = np.empty((len(rows), K))
    for j in range(K):
        pred = model.step(x[:, None])
        out[:, j] = pred
        x = np.log1p(pred)
    return out


def _expanded_static(panel: CountyPanel, ci, day) -> np.ndarray:
    return np.column_stack(
        [
            np.log1p(panel.cases[ci, day].astype(float)),
            np.log1p(panel.neigh_deaths[ci, day].astype(float)),
            np.log1p(panel.neigh_cases[ci, day].astype(float)),
        ]
    )


def fit_expanded_shared(
    panel: CountyPanel, t: int, k: int, options: PredictorOptions | None = None, interventions=None
) -> PooledModel:
    """Pooled fit for horizon `k`: case and neighbor features lag the response by `k` days."""
    options = options or PredictorOptions()
    if not panel.has_neighbors:
        raise ValueError("expanded shared predictor needs neighbor aggregates (adjacency input)")
    ci, si = pooled_rows(panel, t, options.pool_threshold, min_day=k)
    y = panel.deaths[ci, si].astype(float)
    Xs = np.column_stack([np.log1p(panel.deaths[ci, si - 1].astype(float)), _expanded_static(panel, ci, si - k)])
    Xi, ind_names = _indicator_block(panel, ci, si, options, interventions)
    fit_config = options.fit
    if options.social_distancing:
        fit_config = replace(fit_config, l1=options.social_penalty, l2=options.social_penalty)
    names = ("log_deaths", "log_cases", "log_neigh_deaths", "log_neigh_cases", *ind_names)
    return _fit_pooled(PredictorKind.EXPANDED_SHARED, Xs, Xi, y, options, names, horizon=k, fit_config=fit_config)


def predict_expanded_shared(
    model: PooledModel, panel: CountyPanel, t: int, k: int | None = None, rows=None,
    options: PredictorOptions | None = None, interventions=None,
) -> np.ndarray:
    """`k`-day-ahead prediction by recursion; aux features never pass day `t`."""
    options = options or PredictorOptions()
    k = model.horizon if k is None else k
    rows = np.arange(panel.n_counties) if rows is None else np.asarray(rows)
    x = np.log1p(panel.deaths[rows, t].astype(float))
    pred = None
    for j in range(k):
        aux_day = t - k + 1 + j
        target = np.full(len(rows), t + 1 + j)
        aux = _expanded_static(panel, rows, np.full(len(rows), aux_day))
        Xi, _ = _indicator_block(panel, rows, target, options, interventions)
        raw = np.column_stack([x, aux, Xi])
        pred = model.step(raw)
        x = np.log1p(pred)
    return pred


def fit_demographics_shared(
    panel: CountyPanel, demographics: np.ndarray, t: int, options: PredictorOptions | None = None
) -> PooledModel:
    """`demographics` is ``(n_counties, m)`` aligned with the panel's counties."""
    options = options or PredictorOptions()
    ci, si = pooled_rows(panel, t, options.pool_threshold)
    y = panel.deaths[ci, si].astype(float)
    Xs = np.column_stack([np.log1p(panel.deaths[ci, si - 1].astype(float)), np.asarray(demographics, float)[ci]])
    names = ("log_deaths",) + tuple(f"demo_{j}" for j in range(demographics.shape[1]))
    return _fit_pooled(PredictorKind.DEMOGRAPHICS_SHARED, Xs, np.zeros((len(y), 0)), y, options, names)


def predict_demographics_shared(model: PooledModel, panel: CountyPanel, demographics, t: int, K: int, rows=None):
    rows = np.arange(panel.n_counties) if rows is None else np.asarray(rows)
    demo = np.asarray(demographics, dtype=float)[rows]
    x = np.log1p(panel.deaths[rows, t].astype(float))
    out = np.empty((len(rows), K))
    for j in range(K):
        pred = model.step(np.column_stack([x, demo]))
        out[:, j] = pred
        x = np.log1p(pred)
    return out


def fit_predict_demographics_shared(panel, demographics, t, K, options=None):
    model = fit_demographics_shared(panel, demographics, t, options)
    return predict_demographics_shared(model, panel, demographics, t, K)


# --- forecast assembly ------------------------------------------------------

@dataclass
class ForecastSet:
    """Monotone forecasts from several predictors for one as-of day."""

    as_of: int
    horizon: int
    counties: tuple[str, ...]
    last_observed: np.ndarray
    values: dict[str, np.ndarray] = field(default_factory=dict)  # name -> (C, K)
    flags: dict[str, np.ndarray] = field(default_factory=dict)  # name -> (C,) str

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def to_records(self, date_of) -> list[tuple]:
        """Rows ``(countyFIPS, as_of_date, horizon, predictor, value, fallback_flag)``."""
        as_of = date_of(self.as_of).isoformat()
        recs = []
        for name, vals in self.values.items():
            flags = self.flags.get(name, np.full(len(self.counties), ""))
            for i, c in enumerate(self.counties):
                for k in range(self.horizon):
                    recs.append((c, as_of, k + 1, name, float(vals[i, k]), flags[i]))
        return recs


def _name(kind) -> str:
    return kind.value if isinstance(kind, PredictorKind) else str(kind)


def _run_separate(panel, t, K, kind, options, workers=1):
    deaths = panel.deaths[:, : t + 1]
    C = panel.n_counties
    out = np.empty((C, K))
    flags = np.empty(C, dtype=object)
    if kind is PredictorKind.SEPARATE_EXPONENTIAL:
        task = lambda i: fit_predict_separate_exponential(deaths[i], K, options)
    else:
        if options.weekday:
            v = weekday_indicator(panel, np.arange(t + 1 + K))
            task = lambda i: fit_predict_separate_linear(deaths[i], K, options.weekday_linear_window, v)
        else:
            task = lambda i: fit_predict_separate_linear(deaths[i], K, options.linear_window)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, range(C)))
    else:
        results = [task(i) for i in range(C)]
    for i, (pred, flag) in enumerate(results):
        out[i] = pred
        flags[i] = flag
    return out, flags


def _run_pooled(panel, t, K, kind, options, demographics, interventions):
    C = panel.n_counties
    if kind is PredictorKind.SHARED:
        model = fit_shared(panel, t, options)
        return predict_shared(model, panel, t, K), [model]
    if kind is PredictorKind.DEMOGRAPHICS_SHARED:
        if demographics is None:
            raise ValueError("demographics shared predictor needs the demographics input")
        model = fit_demographics_shared(panel, demographics, t, options)
        return predict_demographics_shared(model, panel, demographics, t, K), [model]
    # one fit per horizon; a horizon without enough rows is left NaN for imputation
    out = np.full((C, K), np.nan)
    models = []
    for k in range(1, K + 1):
        try:
            model = fit_expanded_shared(panel, t, k, options, interventions)
        except InsufficientDataError as exc:
            logger.info("day %d horizon %d: %s", t, k, exc)
            continue
        models.append(model)
        if not model.fit.diverged:
            out[:, k - 1] = predict_expanded_shared(model, panel, t, k, options=options, interventions=interventions)
    if not models:
        raise InsufficientDataError(f"insufficient pooled data for {kind.value} at every horizon")
    return out, models


def forecast_predictors(
    panel: CountyPanel,
    t: int,
    K: int,
    kinds: Sequence[PredictorKind | str],
    options: PredictorOptions | None = None,
    demographics: np.ndarray | None = None,
    interventions: np.ndarray | None = None,
    fallback_member: PredictorKind | str | None = PredictorKind.SEPARATE_LINEAR,
    workers: int = 1,
) -> ForecastSet:
    """Fit every requested predictor on data through day `t` and forecast ``1..K``.

    Only ``panel.through(t)`` is ever touched. A shared-family predictor that
    cannot be fitted, or whose fit diverges, is replaced by the
    `fallback_member` forecasts (last observed value if that member is not
    available) and flagged. For the expanded shared predictor this happens
    per horizon, since each horizon has its own fit. Monotonicity is enforced
    on every output.
    """
    options = options or PredictorOptions()
    panel = panel.through(t)
    kinds = [PredictorKind.parse(k) if isinstance(k, str) else k for k in kinds]
    last = panel.deaths[:, t].astype(float)
    fs = ForecastSet(as_of=t, horizon=K, counties=panel.counties, last_observed=last)

    separate = [k for k in kinds if k in (PredictorKind.SEPARATE_LINEAR, PredictorKind.SEPARATE_EXPONENTIAL)]
    pooled = [k for k in kinds if k not in separate]
    for kind in separate:
        vals, flags = _run_separate(panel, t, K, kind, options, workers)
        fs.values[kind.value] = enforce_monotonicity(vals, last)
        fs.flags[kind.value] = flags

    fb_name = _name(PredictorKind.parse(fallback_member) if isinstance(fallback_member, str) else fallback_member) if fallback_member else None
    for kind in pooled:
        flag = ""
        missing = np.ones(K, dtype=bool)
        try:
            vals, models = _run_pooled(panel, t, K, kind, options, demographics, interventions)
            if any(m.fit.diverged for m in models):
                flag = "diverged"
                if kind is not PredictorKind.EXPANDED_SHARED:
                    vals = np.full_like(vals, np.nan)
            missing = np.isnan(vals).all(axis=0)
            if missing.any() and not flag:
                flag = "insufficient_data"
        except InsufficientDataError as exc:
            logger.info("day %d: %s", t, exc)
            flag = "insufficient_data"
            vals = np.full((panel.n_counties, K), np.nan)
        if flag:
            if fb_name and fb_name in fs.values:
                fill = fs.values[fb_name]
                flag = f"{flag}:imputed_{fb_name}"
            else:
                fill = np.repeat(last[:, None], K, axis=1)
                flag = f"{flag}:last_value"
            vals = np.where(missing[None, :], fill, vals)
        fs.values[kind.value] = enforce_monotonicity(vals, last)
        fs.flags[kind.value] = np.full(panel.n_counties, flag, dtype=object)
    return fs
