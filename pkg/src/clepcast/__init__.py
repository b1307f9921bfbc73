"""County-level cumulative death forecasting: five GLM/linear predictors,
the CLEP ensemble, MEPI intervals, rolling backtests and a hospital
severity index."""

from .ensemble import LossHistory, WeightConfig, clep_predict, clep_weights
from .evaluate import BacktestConfig, EngineConfig, RollingEngine, run_backtest
from .glm import FitConfig, fit_ols, fit_poisson_glm, poisson_loglik, standardize
from .ingest import (
    CountyPanel,
    eligible_counties,
    load_adjacency,
    load_county_series,
    load_demographics,
    load_hospitals,
    load_panel,
    neighbor_aggregates,
)
from .mepi import mepi_interval, normalized_error, rank_diagnostic
from .predictors import PredictorKind, PredictorOptions, enforce_monotonicity, forecast_predictors

__version__ = "0.1.0"
