"""Hospital-level severity index built from county forecasts."""
from __future__ import annotations

import logging
from typing import Mapping

import numpy as np
import pandas as pd

from .ingest import HospitalTable

logger = logging.getLogger(__name__)

CATEGORIES = ("low", "medium", "high")


def allocate_deaths(county_value: float, employees) -> np.ndarray:
    """Split a county count across its hospitals in proportion to staff.

    Hospitals with no recorded employees at all share the count equally.
    """
    emp = np.asarray(employees, dtype=float)
    if emp.size == 0:
        raise ValueError("county has no hospitals")
    if np.any(emp < 0):
        raise ValueError("employee counts must be non-negative")
    total = emp.sum()
    if total == 0:
        return np.full(emp.size, county_value / emp.size)
    return county_value * emp / total


def rank_percentile(values) -> np.ndarray:
    """Share of the other entries strictly below each value, in [0, 100].

    Tied values share a percentile; the smallest value maps to 0 and the
    largest to 100.
    """
    v = np.asarray(values, dtype=float)
    n = v.size
    if n <= 1:
        return np.full(n, 100.0)
    below = np.searchsorted(np.sort(v), v, side="left")
    return 100.0 * below / (n - 1)


def tercile_categories(scores) -> tuple[np.ndarray, bool]:
    """Low / medium / high by the rank of each score among all scores.

    Returns the categories and a flag that is set when the split is
    degenerate (fewer than three hospitals or tied scores collapsing a group).
    """
    s = np.asarray(scores, dtype=float)
    n = s.size
    below = np.searchsorted(np.sort(s), s, side="left")
    frac = below / max(n, 1)
    cats = np.where(frac < 1 / 3, "low", np.where(frac < 2 / 3, "medium", "high"))
    degenerate = n < 3 or len(set(cats)) < 3
    return cats.astype(object), degenerate


def severity_index(
    hospitals: HospitalTable,
    county_totals: Mapping[str, float],
    county_new7: Mapping[str, float],
) -> tuple[pd.DataFrame, bool]:
    """Severity records for every hospital whose county has a forecast.

    `county_totals` are deaths so far and `county_new7` the predicted new
    deaths over the next seven days, both keyed by county FIPS.
    """
    groups = hospitals.by_county()
    orphans = sorted(c for c in county_totals if c not in groups)
    if orphans:
        logger.warning("%d counties have forecasts but no hospitals and are skipped (first: %s)",
                       len(orphans), orphans[0])
    rows = []
    for c, idx in sorted(groups.items()):
        if c not in county_totals:
            logger.warning("no forecast for county %s; its %d hospitals are skipped", c, len(idx))
            continue
        emp = hospitals.employees[idx]
        tot = allocate_deaths(float(county_totals[c]), emp)
        new = allocate_deaths(float(county_new7.get(c, 0.0)), emp)
        for j, i in enumerate(idx):
            rows.append((hospitals.hospital_ids[i], c, tot[j], new[j]))
    df = pd.DataFrame(rows, columns=["hospital_id", "countyFIPS", "alloc_total", "alloc_new7"])
    df["pct_total"] = rank_percentile(df["alloc_total"])
    df["pct_new"] = rank_percentile(df["alloc_new7"])
    df["score"] = (df["pct_total"] + df["pct_new"]) / 2.0
    cats, degenerate = tercile_categories(df["score"])
    df["category"] = cats
    if degenerate:
        logger.warning("severity categories are degenerate for %d hospitals", len(df))
    return df, degenerate
