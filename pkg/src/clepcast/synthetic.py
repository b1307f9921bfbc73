"""Synthetic county panels and input files for tests and demos."""
from __future__ import annotations

import datetime as dt
from pathlib import Path

import numpy as np
import pandas as pd

from .ingest import DEMOGRAPHIC_FEATURES, CountyPanel, graph_from_pairs, neighbor_aggregates


def grid_pairs(counties, width: int) -> list[tuple[str, str]]:
    """Rook adjacency for counties laid out row-major on a grid."""
    pairs = []
    n = len(counties)
    for i in range(n):
        r, c = divmod(i, width)
        if c + 1 < width and i + 1 < n:
            pairs.append((counties[i], counties[i + 1]))
        if i + width < n:
            pairs.append((counties[i], counties[i + width]))
    return pairs


def epidemic_panel(
    n_counties: int = 100,
    n_days: int = 90,
    seed: int = 0,
    start: dt.date = dt.date(2020, 3, 1),
    grid_width: int = 10,
) -> tuple[CountyPanel, list[tuple[str, str]]]:
    """Logistic-ish outbreaks with Poisson daily increments, plus neighbors.

    Returns the panel (with neighbor aggregates) and the adjacency pairs.
    """
    rng = np.random.default_rng(seed)
    counties = [f"{1001 + i:05d}" for i in range(n_counties)]
    t = np.arange(n_days)
    onset = rng.integers(0, n_days // 2, size=n_counties)
    size = np.exp(rng.uniform(np.log(20), np.log(3000), size=n_counties))
    rate = rng.uniform(0.08, 0.25, size=n_counties)
    mid = onset + rng.uniform(15, 40, size=n_counties)
    curve = size[:, None] / (1.0 + np.exp(-rate[:, None] * (t[None, :] - mid[:, None])))
    curve = np.where(t[None, :] >= onset[:, None], curve, 0.0)
    daily_mean = np.diff(curve, axis=1, prepend=0.0).clip(min=0)
    deaths = np.cumsum(rng.poisson(daily_mean), axis=1)
    cases = np.cumsum(rng.poisson(daily_mean * rng.uniform(15, 40, size=(n_counties, 1)) + 0.5), axis=1)
    panel = CountyPanel(counties=tuple(counties), start=start, deaths=deaths, cases=cases)
    pairs = grid_pairs(counties, grid_width)
    return neighbor_aggregates(panel, graph_from_pairs(pairs)), pairs


def linear_panel(n_counties: int = 3, n_days: int = 30, start: dt.date = dt.date(2020, 3, 1)):
    """Counties whose deaths grow exactly linearly from 10 upward."""
    counties = [f"{6001 + i:05d}" for i in range(n_counties)]
    t = np.arange(n_days)
    slopes = 2 + np.arange(n_counties)
    deaths = 10 + slopes[:, None] * t[None, :]
    cases = 20 * deaths
    panel = CountyPanel(counties=tuple(counties), start=start, deaths=deaths, cases=cases)
    pairs = [(counties[i], counties[i + 1]) for i in range(n_counties - 1)]
    return neighbor_aggregates(panel, graph_from_pairs(pairs)), pairs


def demographics_frame(counties, seed: int = 0) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    n = len(counties)
    data = {
        "pop_density": rng.lognormal(4, 1.2, n),
        "pop_estimate": rng.lognormal(11, 1.0, n).round(),
        "n_hospitals": rng.integers(0, 12, n),
        "n_icu_beds": rng.integers(0, 200, n),
        "median_age": rng.normal(40, 5, n),
        "pct_smokers": rng.uniform(8, 28, n),
        "pct_diabetes": rng.uniform(6, 18, n),
        "heart_disease_mortality": rng.normal(180, 40, n),
    }
    df = pd.DataFrame({"countyFIPS": list(counties), **data})
    return df[["countyFIPS", *DEMOGRAPHIC_FEATURES]]


def hospitals_frame(counties, seed: int = 0, max_per_county: int = 3) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    rows = []
    for c in counties:
        for j in range(int(rng.integers(1, max_per_county + 1))):
            rows.append((f"H{c}{j}", c, int(rng.integers(20, 3000))))
    return pd.DataFrame(rows, columns=["hospital_id", "countyFIPS", "employees"])


def write_inputs(panel: CountyPanel, pairs, out_dir, seed: int = 0) -> dict[str, Path]:
    """Write deaths, cases, adjacency, demographics and hospitals CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dates = [panel.date(i).isoformat() for i in range(panel.n_days)]

    def wide(values, path):
        df = pd.DataFrame(values, columns=dates)
        df.insert(0, "State", "XX")
        df.insert(0, "CountyName", [f"County {c}" for c in panel.counties])
        df.insert(0, "countyFIPS", list(panel.counties))
        df.to_csv(path, index=False)

    paths = {
        "deaths": out / "deaths.csv",
        "cases": out / "cases.csv",
        "adjacency": out / "adjacency.csv",
        "demographics": out / "demographics.csv",
        "hospitals": out / "hospitals.csv",
    }
    wide(panel.deaths, paths["deaths"])
    wide(panel.cases, paths["cases"])
    pd.DataFrame(pairs, columns=["countyFIPS", "neighborFIPS"]).to_csv(paths["adjacency"], index=False)
    demographics_frame(panel.counties, seed).to_csv(paths["demographics"], index=False)
    hospitals_frame(panel.counties, seed).to_csv(paths["hospitals"], index=False)
    return paths
