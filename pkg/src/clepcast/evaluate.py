"""Rolling backtests and forecast / interval metrics."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

from .ensemble import LossHistory, WeightConfig, clep_predict, clep_weights, forecast_loss
from .ingest import CountyPanel, eligible_mask
from .mepi import ErrorStore, error_tuples, mepi_bounds, normalized_error, rank_diagnostic
from .predictors import ForecastSet, PredictorKind, PredictorOptions, forecast_predictors

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CLEP = "clep"
DEFAULT_MEMBERS = (PredictorKind.EXPANDED_SHARED, PredictorKind.SEPARATE_LINEAR)


# --- metrics ----------------------------------------------------------------

def _masked(pred, obs, mask):
    pred = np.asarray(pred, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if mask is None:
        return pred, obs
    mask = np.asarray(mask, dtype=bool)
    return pred[mask], obs[mask]


def mape_t(pred, obs, mask=None) -> float:
    """Mean absolute percentage error over the eligible counties; NaN if none."""
    p, y = _masked(pred, obs, mask)
    if p.size == 0:
        return math.nan
    return float(100.0 * np.mean(np.abs(p - y) / y))


def raw_mae_t(pred, obs, mask=None) -> float:
    p, y = _masked(pred, obs, mask)
    return float(np.mean(np.abs(p - y))) if p.size else math.nan


def sqrt_mae_t(pred, obs, mask=None) -> float:
    p, y = _masked(pred, obs, mask)
    return float(np.mean(np.abs(np.sqrt(np.maximum(p, 0)) - np.sqrt(y)))) if p.size else math.nan


def coverage(lower, upper, obs) -> float:
    """Fraction of days whose observation lies in the closed interval."""
    lower, upper, obs = (np.asarray(a, dtype=float) for a in (lower, upper, obs))
    if obs.size == 0:
        raise ValueError("coverage over an empty period")
    return float(np.mean((obs >= lower) & (obs <= upper)))


def normalized_length(lower, upper, obs) -> float:
    lower, upper, obs = (np.asarray(a, dtype=float) for a in (lower, upper, obs))
    if obs.size == 0:
        raise ValueError("normalized length over an empty period")
    return float(np.mean((upper - lower) / np.maximum(1.0, obs)))


def nearest_rank(values, q: float) -> float:
    """Smallest value with at least ``q`` percent of the data at or below it."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("percentile of an empty series")
    r = max(1, math.ceil(q / 100.0 * v.size - 1e-9))
    return float(v[r - 1])


def summary_percentiles(series) -> dict[str, float]:
    """p10 / median / p90 of a daily metric series (nearest-rank convention)."""
    s = np.asarray(series, dtype=float)
    s = s[~np.isnan(s)]
    return {"p10": nearest_rank(s, 10), "median": nearest_rank(s, 50), "p90": nearest_rank(s, 90)}


# --- rolling engine ---------------------------------------------------------

@dataclass(frozen=True)
class EngineConfig:
    members: tuple[PredictorKind, ...] = DEFAULT_MEMBERS
    extra: tuple[PredictorKind, ...] = ()  # evaluated but not in the ensemble
    max_horizon: int = 14
    weights: WeightConfig = field(default_factory=WeightConfig)
    mepi_window: int = 5
    mepi_clamp: bool = True
    fallback_member: PredictorKind | None = PredictorKind.SEPARATE_LINEAR
    options: PredictorOptions = field(default_factory=PredictorOptions)
    workers: int = 1

    @property
    def predictors(self) -> tuple[PredictorKind, ...]:
        seen = list(dict.fromkeys(self.members + self.extra))
        return tuple(seen)

    @property
    def warmup(self) -> int:
        """As-of days the loss history needs before weights use a full window."""
        return self.weights.window + self.weights.loss_horizon - 1


@dataclass
class StepResult:
    """Everything issued on the morning after as-of day ``t``."""

    forecasts: ForecastSet  # members, extras and "clep"
    weights: np.ndarray  # (C, n_members)
    lower: np.ndarray  # (C, K) MEPI bounds around the CLEP forecast
    upper: np.ndarray
    n_errors: np.ndarray  # (C, K) errors behind each interval

    @property
    def as_of(self) -> int:
        return self.forecasts.as_of


class RollingEngine:
    """Steps through as-of days in order, keeping all state causal.

    At day ``t`` only ``panel.through(t)`` is read: the new observation is
    scored against forecasts issued earlier (feeding losses and interval
    errors), then all predictors are refit and CLEP and MEPI issued.
    """

    def __init__(self, panel: CountyPanel, config: EngineConfig | None = None,
                 demographics: np.ndarray | None = None, interventions: np.ndarray | None = None):
        self.panel = panel
        self.config = config or EngineConfig()
        self.demographics = demographics
        self.interventions = interventions
        C, T = panel.n_counties, panel.n_days
        self.member_names = tuple(m.value for m in self.config.members)
        self.losses = LossHistory(C, T, self.member_names)
        self.errors = ErrorStore(C, T, range(1, self.config.max_horizon + 1))
        self._issued: dict[int, StepResult] = {}
        self._last: int | None = None

    def issued(self, t: int) -> StepResult | None:
        return self._issued.get(t)

    def _score_new_day(self, data: CountyPanel, t: int) -> None:
        y = data.deaths[:, t].astype(float)
        h = self.config.weights.loss_horizon
        prev = self._issued.get(t - h)
        if prev is not None:
            for m in self.member_names:
                self.losses.record(m, t, forecast_loss(prev.forecasts[m][:, h - 1], y, self.config.weights.transform))
        for k in self.errors.horizons:
            prev = self._issued.get(t - k)
            if prev is not None:
                self.errors.record(k, t, normalized_error(y, prev.forecasts[CLEP][:, k - 1]))

    def step(self, t: int) -> StepResult:
        if self._last is not None and t != self._last + 1:
            raise ValueError("as-of days must be processed consecutively")
        cfg = self.config
        K = cfg.max_horizon
        data = self.panel.through(t)
        self._score_new_day(data, t)

        fs = forecast_predictors(
            data, t, K, cfg.predictors, cfg.options, self.demographics, self.interventions,
            fallback_member=cfg.fallback_member, workers=cfg.workers,
        )
        w = clep_weights(self.losses, t, cfg.weights)
        fs.values[CLEP] = clep_predict([fs.values[m] for m in self.member_names], w)
        fs.flags[CLEP] = np.full(data.n_counties, "", dtype=object)

        lower = np.empty((data.n_counties, K))
        upper = np.empty_like(lower)
        n_err = np.zeros((data.n_counties, K), dtype=int)
        y_last = fs.last_observed
        for k in range(1, K + 1):
            dmax, n = self.errors.delta_max(k, t, cfg.mepi_window)
            dmax = np.where(n > 0, dmax, 0.0)
            lo, hi = mepi_bounds(fs.values[CLEP][:, k - 1], dmax, y_last, cfg.mepi_clamp)
            lower[:, k - 1], upper[:, k - 1], n_err[:, k - 1] = lo, hi, n
        result = StepResult(fs, w, lower, upper, n_err)

        self._issued[t] = result
        keep = max(K, cfg.weights.loss_horizon)
        for old in [d for d in self._issued if d < t - keep]:
            del self._issued[old]
        self._last = t
        return result

    def run(self, first: int, last: int) -> Iterator[StepResult]:
        for t in range(first, last + 1):
            yield self.step(t)


# --- backtest ---------------------------------------------------------------

@dataclass(frozen=True)
class BacktestConfig:
    start: int  # first target day scored (offset)
    end: int  # last target day scored
    horizons: tuple[int, ...] = (3, 5, 7, 14)
    threshold: int = 10
    engine: EngineConfig = field(default_factory=EngineConfig)
    trajectory_counties: int = 6
    keep_steps: bool = False


@dataclass
class BacktestReport:
    daily: pd.DataFrame  # date, horizon, predictor, n_counties, mape, raw_mae, sqrt_mae
    intervals: pd.DataFrame  # countyFIPS, horizon, n_days, coverage, normalized_length
    trajectories: pd.DataFrame
    summary: dict
    errors: ErrorStore | None = None
    steps: list[StepResult] = field(default_factory=list)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(self.daily, out / "metrics_daily.csv", "metrics_daily")
        write_csv(self.intervals, out / "intervals_eval.csv", "intervals_eval")
        write_csv(self.trajectories, out / "trajectories.csv", "trajectories")
        (out / "summary.json").write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n")


def write_csv(df: pd.DataFrame, path, schema: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: clepcast/{schema} v{SCHEMA_VERSION}\n")
        df.to_csv(fh, index=False, float_format="%.10g", lineterminator="\n")


def backtest_range(panel: CountyPanel, config: BacktestConfig) -> tuple[int, int]:
    """First and last as-of days the engine must run for `config`."""
    eng = config.engine
    max_h = max(config.horizons)
    first = config.start - max_h - eng.warmup
    if config.end >= panel.n_days:
        raise ValueError(f"end day {config.end} is past the panel's last day {panel.n_days - 1}")
    if config.start > config.end:
        raise ValueError("start after end")
    if first < 0:
        raise ValueError(
            f"insufficient warm-up: scoring from day {config.start} with horizon {max_h} needs "
            f"{max_h + eng.warmup} earlier days of forecasts, but the panel starts {config.start} days before"
        )
    return first, config.end


def run_backtest(
    panel: CountyPanel,
    config: BacktestConfig,
    demographics: np.ndarray | None = None,
    interventions: np.ndarray | None = None,
) -> BacktestReport:
    """Rolling-origin evaluation of every configured predictor and CLEP.

    Target days ``start..end`` are scored for each horizon using forecasts
    issued ``k`` days earlier and the eligible set of the target day. MEPI
    intervals are scored only when they rest on a full error window.
    """
    if max(config.horizons) > config.engine.max_horizon:
        raise ValueError("evaluation horizon exceeds the engine's max_horizon")
    first, last = backtest_range(panel, config)
    engine = RollingEngine(panel, config.engine, demographics, interventions)
    names = [p.value for p in config.engine.predictors] + [CLEP]
    window = config.engine.mepi_window

    daily_rows = []
    C = panel.n_counties
    hits = {k: np.zeros(C) for k in config.horizons}
    lengths = {k: np.zeros(C) for k in config.horizons}
    counts = {k: np.zeros(C, dtype=int) for k in config.horizons}
    final = panel.deaths[:, config.end]
    traj_idx = np.argsort(-final, kind="stable")[: config.trajectory_counties]
    traj_rows = []
    steps = []

    for result in engine.run(first, last):
        t = result.as_of
        if config.keep_steps:
            steps.append(result)
        if not config.start <= t <= config.end:
            continue
        y = panel.deaths[:, t].astype(float)
        mask = eligible_mask(panel, t, config.threshold)
        for k in config.horizons:
            prev = engine.issued(t - k)
            if prev is None:
                continue
            for name in names:
                p = prev.forecasts[name][:, k - 1]
                if mask.any():
                    daily_rows.append(
                        (panel.date(t).isoformat(), k, name, int(mask.sum()),
                         mape_t(p, y, mask), raw_mae_t(p, y, mask), sqrt_mae_t(p, y, mask))
                    )
            lo, hi = prev.lower[:, k - 1], prev.upper[:, k - 1]
            full = mask & (prev.n_errors[:, k - 1] >= window)
            hits[k] += full & (y >= lo) & (y <= hi)
            lengths[k] += np.where(full, (hi - lo) / np.maximum(1.0, y), 0.0)
            counts[k] += full
            for i in traj_idx:
                traj_rows.append(
                    (panel.counties[i], panel.date(t).isoformat(), k, y[i],
                     prev.forecasts[CLEP][i, k - 1], lo[i], hi[i])
                )
        if not mask.any():
            logger.info("day %s: no eligible counties, skipped", panel.date(t))

    daily = pd.DataFrame(
        daily_rows, columns=["date", "horizon", "predictor", "n_counties", "mape", "raw_mae", "sqrt_mae"]
    )
    iv_rows = []
    for k in config.horizons:
        for i in np.flatnonzero(counts[k]):
            n = counts[k][i]
            iv_rows.append((panel.counties[i], k, int(n), hits[k][i] / n, lengths[k][i] / n))
    intervals = pd.DataFrame(iv_rows, columns=["countyFIPS", "horizon", "n_days", "coverage", "normalized_length"])
    trajectories = pd.DataFrame(
        traj_rows, columns=["countyFIPS", "date", "horizon", "observed", "clep", "lower", "upper"]
    )
    summary = summarize(daily, intervals, panel, config)
    return BacktestReport(daily, intervals, trajectories, summary, engine.errors, steps)


def summarize(daily: pd.DataFrame, intervals: pd.DataFrame, panel: CountyPanel, config: BacktestConfig) -> dict:
    out = {
        "start": panel.date(config.start).isoformat(),
        "end": panel.date(config.end).isoformat(),
        "horizons": list(config.horizons),
        "percentile_convention": "nearest-rank",
        "ensemble": [m.value for m in config.engine.members],
        "weights": asdict(config.engine.weights),
        "metrics": {},
        "intervals": {},
    }
    for (name, k), grp in daily.groupby(["predictor", "horizon"], sort=True):
        entry = out["metrics"].setdefault(name, {})
        entry[str(k)] = {m: summary_percentiles(grp[m]) for m in ("mape", "raw_mae", "sqrt_mae")}
    for k, grp in intervals.groupby("horizon", sort=True):
        out["intervals"][str(k)] = {
            "n_counties": int(len(grp)),
            "coverage": summary_percentiles(grp["coverage"]),
            "normalized_length": summary_percentiles(grp["normalized_length"]),
            "mean_coverage": float(grp["coverage"].mean()),
        }
    return out


# --- exchangeability diagnostic over an error store ----------------------

SLOT_LABELS = ("t+k", "t", "t-1", "t-2", "t-3", "t-4")


def diagnose_errors(errors: ErrorStore, counties: Sequence[str], horizons, window: int = 5,
                    mask_rows=None) -> pd.DataFrame:
    """Average slot ranks per horizon, pooled over counties and per county."""
    rows = []
    for k in horizons:
        arr = errors.get(k)
        pooled = []
        for i, c in enumerate(counties):
            if mask_rows is not None and not mask_rows[i]:
                continue
            tup = error_tuples(arr[i], k, window)
            if len(tup):
                pooled.append(tup)
                for slot, r in zip(SLOT_LABELS, rank_diagnostic(tup)):
                    rows.append((c, k, slot, float(r), len(tup)))
        if pooled:
            allt = np.vstack(pooled)
            for slot, r in zip(SLOT_LABELS, rank_diagnostic(allt)):
                rows.append(("all", k, slot, float(r), len(allt)))
    return pd.DataFrame(rows, columns=["scope", "horizon", "slot", "mean_rank", "n_tuples"])
