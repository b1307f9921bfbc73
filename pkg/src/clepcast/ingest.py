"""Loading and aligning the county-level input tables.

Every table is keyed by a 5-digit county FIPS string. Dates are kept as
integer day offsets from the panel's first date; calendar dates only appear
when reading or writing files.
"""
from __future__ import annotations

import datetime as dt
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import sparse

logger = logging.getLogger(__name__)

DEMOGRAPHIC_FEATURES = (
    "pop_density",
    "pop_estimate",
    "n_hospitals",
    "n_icu_beds",
    "median_age",
    "pct_smokers",
    "pct_diabetes",
    "heart_disease_mortality",
)

_FIPS_RE = re.compile(r"^\d{1,5}$")


class IngestError(ValueError):
    """Fatal problem with an input file."""


def normalize_fips(raw) -> str | None:
    """Return a zero-padded 5-digit FIPS code, or None if `raw` is not one.

    Numeric ids shorter than five digits are padded (``1001`` -> ``"01001"``)
    since spreadsheet exports routinely strip the leading zero. The all-zero
    code is used for "unallocated" rows and is rejected.
    """
    if raw is None:
        return None
    s = str(raw).strip()
    if s.endswith(".0"):
        s = s[:-2]
    if not _FIPS_RE.match(s):
        return None
    s = s.zfill(5)
    if s == "00000":
        return None
    return s


def _parse_date(label: str) -> dt.date:
    label = str(label).strip()
    try:
        return dt.date.fromisoformat(label)
    except ValueError:
        pass
    for fmt in ("%m/%d/%y", "%m/%d/%Y"):
        try:
            return dt.datetime.strptime(label, fmt).date()
        except ValueError:
            continue
    raise IngestError(f"unparseable date column {label!r}")


def running_max_clean(values: np.ndarray) -> np.ndarray:
    """Clamp each row of a cumulative-count matrix to its running maximum."""
    values = np.asarray(values)
    if values.size == 0:
        return values.copy()
    return np.maximum.accumulate(values, axis=-1)


@dataclass(frozen=True)
class CountySeries:
    """One wide county-by-date table of cumulative counts."""

    counties: tuple[str, ...]
    start: dt.date
    values: np.ndarray  # (n_counties, n_days) int64
    names: tuple[str, ...] = ()
    states: tuple[str, ...] = ()
    n_cleaned: int = 0

    @property
    def n_days(self) -> int:
        return self.values.shape[1]

    @property
    def dates(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=i) for i in range(self.n_days)]


def load_county_series(path, clean: bool = True) -> CountySeries:
    """Read a wide ``countyFIPS,CountyName,State,<date>...`` CSV.

    Rows with a malformed FIPS are dropped with a warning. Date columns must
    be contiguous. With ``clean=True`` downticks in the cumulative series are
    removed by a running-maximum clamp.
    """
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype=str, comment="#")
    except FileNotFoundError:
        raise
    except Exception as exc:  # pandas raises a zoo of parser errors
        raise IngestError(f"could not parse {path}: {exc}") from exc
    if df.shape[1] < 2:
        raise IngestError(f"{path}: expected an id column followed by date columns")

    columns = list(df.columns)
    id_col = columns[0]
    meta_cols = [c for c in columns[1:3] if c.strip().lower() in ("countyname", "county name", "state", "statefips")]
    date_cols = [c for c in columns[1:] if c not in meta_cols]
    if not date_cols:
        raise IngestError(f"{path}: no date columns")
    dates = [_parse_date(c) for c in date_cols]
    for prev, cur in zip(dates, dates[1:]):
        if (cur - prev).days != 1:
            raise IngestError(f"{path}: non-contiguous dates ({prev} -> {cur})")

    counties: list[str] = []
    rows: list[np.ndarray] = []
    names: list[str] = []
    states: list[str] = []
    seen: set[str] = set()
    for raw_id, rec in zip(df[id_col], df.itertuples(index=False)):
        fips = normalize_fips(raw_id)
        if fips is None:
            logger.warning("%s: dropping row with malformed county id %r", path.name, raw_id)
            continue
        if fips in seen:
            logger.warning("%s: duplicate county %s, keeping the first row", path.name, fips)
            continue
        rec = dict(zip(columns, rec))
        try:
            vals = np.array(
                [0 if pd.isna(rec[c]) or str(rec[c]).strip() == "" else int(float(rec[c])) for c in date_cols],
                dtype=np.int64,
            )
        except ValueError as exc:
            raise IngestError(f"{path}: non-numeric count for county {fips}: {exc}") from exc
        if (vals < 0).any():
            logger.warning("%s: negative counts for %s set to 0", path.name, fips)
            vals = np.clip(vals, 0, None)
        seen.add(fips)
        counties.append(fips)
        rows.append(vals)
        names.append(str(rec[meta_cols[0]]) if meta_cols else "")
        states.append(str(rec[meta_cols[1]]) if len(meta_cols) > 1 else "")

    values = np.vstack(rows) if rows else np.zeros((0, len(date_cols)), dtype=np.int64)
    n_cleaned = 0
    if clean:
        cleaned = running_max_clean(values)
        n_cleaned = int((cleaned != values).sum())
        if n_cleaned:
            logger.warning("%s: clamped %d downticks in cumulative counts", path.name, n_cleaned)
        values = cleaned

    order = np.argsort(counties, kind="stable")
    return CountySeries(
        counties=tuple(counties[i] for i in order),
        start=dates[0],
        values=values[order],
        names=tuple(names[i] for i in order),
        states=tuple(states[i] for i in order),
        n_cleaned=n_cleaned,
    )


def write_county_series(series: CountySeries, path) -> None:
    dates = [d.isoformat() for d in series.dates]
    df = pd.DataFrame(series.values, columns=dates)
    df.insert(0, "State", list(series.states) or [""] * len(series.counties))
    df.insert(0, "CountyName", list(series.names) or [""] * len(series.counties))
    df.insert(0, "countyFIPS", list(series.counties))
    df.to_csv(path, index=False)


@dataclass(frozen=True)
class CountyPanel:
    """Aligned cumulative deaths and cases, plus optional neighbor sums.

    Arrays are ``(n_counties, n_days)`` and marked read-only so a panel can be
    handed to workers without copying.
    """

    counties: tuple[str, ...]
    start: dt.date
    deaths: np.ndarray
    cases: np.ndarray
    neigh_deaths: np.ndarray | None = None
    neigh_cases: np.ndarray | None = None
    names: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("deaths", "cases", "neigh_deaths", "neigh_cases"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.int64)
            if arr.flags.writeable:
                arr = arr.copy()
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.deaths.shape != self.cases.shape:
            raise ValueError("deaths and cases must have the same shape")
        if self.deaths.shape[0] != len(self.counties):
            raise ValueError("one row per county required")

    @property
    def n_counties(self) -> int:
        return len(self.counties)

    @property
    def n_days(self) -> int:
        return self.deaths.shape[1]

    @property
    def has_neighbors(self) -> bool:
        return self.neigh_deaths is not None

    def date(self, t: int) -> dt.date:
        return self.start + dt.timedelta(days=int(t))

    def offset(self, date: dt.date | str) -> int:
        if isinstance(date, str):
            date = _parse_date(date)
        return (date - self.start).days

    def index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.counties)}

    def slice_days(self, first: int, last: int) -> "CountyPanel":
        """Restrict to day offsets ``first..last`` inclusive."""
        if first < 0 or last >= self.n_days or first > last:
            raise IndexError(f"day range {first}..{last} outside panel of {self.n_days} days")
        sl = slice(first, last + 1)
        return replace(
            self,
            start=self.date(first),
            deaths=self.deaths[:, sl],
            cases=self.cases[:, sl],
            neigh_deaths=None if self.neigh_deaths is None else self.neigh_deaths[:, sl],
            neigh_cases=None if self.neigh_cases is None else self.neigh_cases[:, sl],
        )

    def through(self, t: int) -> "CountyPanel":
        """Data available at the end of day `t`; offsets are preserved."""
        return self.slice_days(0, t)

    def subset(self, counties: Iterable[str]) -> "CountyPanel":
        idx = self.index()
        rows = [idx[c] for c in counties]
        pick = lambda a: None if a is None else a[rows]
        return replace(
            self,
            counties=tuple(self.counties[i] for i in rows),
            deaths=self.deaths[rows],
            cases=self.cases[rows],
            neigh_deaths=pick(self.neigh_deaths),
            neigh_cases=pick(self.neigh_cases),
            names=tuple(self.names[i] for i in rows) if self.names else (),
        )


def build_panel(deaths: CountySeries, cases: CountySeries | None = None) -> CountyPanel:
    """Align a deaths table and a cases table into one panel.

    Counties present in only one of the two files are dropped with a warning,
    and the date range is cut to the overlap of both files.
    """
    if cases is None:
        logger.warning("no case file supplied; case counts set to zero")
        return CountyPanel(
            counties=deaths.counties,
            start=deaths.start,
            deaths=deaths.values,
            cases=np.zeros_like(deaths.values),
            names=deaths.names,
        )

    common = sorted(set(deaths.counties) & set(cases.counties))
    only_d = set(deaths.counties) - set(common)
    only_c = set(cases.counties) - set(common)
    if only_d:
        logger.warning("dropping %d counties missing from the case file: %s", len(only_d), sorted(only_d)[:10])
    if only_c:
        logger.warning("dropping %d counties missing from the death file: %s", len(only_c), sorted(only_c)[:10])

    first = max(deaths.start, cases.start)
    last = min(deaths.start + dt.timedelta(days=deaths.n_days - 1), cases.start + dt.timedelta(days=cases.n_days - 1))
    if last < first:
        raise IngestError("death and case files share no dates")
    if deaths.start != cases.start or deaths.n_days != cases.n_days:
        logger.warning("death and case files cover different dates; using %s..%s", first, last)
    n = (last - first).days + 1

    def pick(series: CountySeries) -> np.ndarray:
        idx = {c: i for i, c in enumerate(series.counties)}
        off = (first - series.start).days
        return series.values[[idx[c] for c in common], off : off + n]

    d_idx = {c: i for i, c in enumerate(deaths.counties)}
    names = tuple(deaths.names[d_idx[c]] for c in common) if deaths.names else ()
    return CountyPanel(
        counties=tuple(common), start=first, deaths=pick(deaths), cases=pick(cases), names=names
    )


def load_panel(deaths_path, cases_path=None, clean: bool = True) -> CountyPanel:
    deaths = load_county_series(deaths_path, clean=clean)
    cases = load_county_series(cases_path, clean=clean) if cases_path is not None else None
    return build_panel(deaths, cases)


@dataclass
class AdjacencyGraph:
    neighbors: dict[str, set[str]] = field(default_factory=dict)
    unknown: set[str] = field(default_factory=set)  # ids not in the panel

    def add_edge(self, a: str, b: str) -> None:
        if a == b:
            self.neighbors.setdefault(a, set())
            return
        self.neighbors.setdefault(a, set()).add(b)
        self.neighbors.setdefault(b, set()).add(a)

    def __getitem__(self, county: str) -> set[str]:
        return self.neighbors.get(county, set())

    def is_symmetric(self) -> bool:
        return all(a in self.neighbors.get(b, ()) and a != b for a, ns in self.neighbors.items() for b in ns)


def graph_from_pairs(pairs: Iterable[tuple[str, str]], known: Iterable[str] | None = None) -> AdjacencyGraph:
    graph = AdjacencyGraph()
    for a, b in pairs:
        graph.add_edge(a, b)
    if known is not None:
        known = set(known)
        graph.unknown = {c for c in graph.neighbors if c not in known}
        if graph.unknown:
            logger.warning("adjacency lists %d counties absent from the panel", len(graph.unknown))
    return graph


def load_adjacency(path, known: Iterable[str] | None = None) -> AdjacencyGraph:
    """Read ``countyFIPS,neighborFIPS`` pairs, closing them under symmetry."""
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype=str, comment="#")
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise IngestError(f"could not parse {path}: {exc}") from exc
    if df.shape[1] < 2:
        raise IngestError(f"{path}: expected two columns (countyFIPS, neighborFIPS)")
    pairs = []
    for a, b in zip(df.iloc[:, 0], df.iloc[:, 1]):
        fa, fb = normalize_fips(a), normalize_fips(b)
        if fa is None or fb is None:
            logger.warning("%s: skipping malformed pair (%r, %r)", path.name, a, b)
            continue
        pairs.append((fa, fb))
    return graph_from_pairs(pairs, known)


def neighbor_aggregates(panel: CountyPanel, graph: AdjacencyGraph) -> CountyPanel:
    """Attach neighbor death/case sums. Neighbors outside the panel count as 0."""
    idx = panel.index()
    rows, cols = [], []
    for c, i in idx.items():
        for n in graph[c]:
            j = idx.get(n)
            if j is not None and j != i:
                rows.append(i)
                cols.append(j)
    adj = sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(panel.n_counties, panel.n_counties)
    )
    return replace(
        panel,
        neigh_deaths=np.asarray(adj @ panel.deaths, dtype=np.int64),
        neigh_cases=np.asarray(adj @ panel.cases, dtype=np.int64),
    )


def eligible_counties(panel: CountyPanel, t: int, threshold: int = 10) -> set[str]:
    return {panel.counties[i] for i in np.flatnonzero(eligible_mask(panel, t, threshold))}


def eligible_mask(panel: CountyPanel, t: int, threshold: int = 10) -> np.ndarray:
    return panel.deaths[:, t] >= threshold


@dataclass(frozen=True)
class DemographicsTable:
    counties: tuple[str, ...]
    values: np.ndarray  # (n_counties, len(features))
    features: tuple[str, ...] = DEMOGRAPHIC_FEATURES
    imputed: tuple[tuple[str, str], ...] = ()  # (county, feature)

    def aligned(self, counties: Sequence[str]) -> np.ndarray:
        """Rows in the order of `counties`; unknown counties get column medians."""
        idx = {c: i for i, c in enumerate(self.counties)}
        med = np.median(self.values, axis=0) if len(self.counties) else np.zeros(len(self.features))
        out = np.empty((len(counties), len(self.features)))
        for r, c in enumerate(counties):
            out[r] = self.values[idx[c]] if c in idx else med
        return out


def load_demographics(path, counties: Iterable[str] | None = None) -> DemographicsTable:
    """Read the eight static county features, imputing gaps with column medians.

    Rows for counties outside `counties` are dropped; panel counties missing
    from the file entirely are filled with the medians as well.
    """
    path = Path(path)
    df = pd.read_csv(path, dtype={0: str}, comment="#")
    df = df.rename(columns={df.columns[0]: "countyFIPS"})
    missing_cols = [f for f in DEMOGRAPHIC_FEATURES if f not in df.columns]
    if missing_cols:
        raise IngestError(f"{path}: missing demographic columns {missing_cols}")
    df["countyFIPS"] = [normalize_fips(x) for x in df["countyFIPS"]]
    bad = df["countyFIPS"].isna()
    if bad.any():
        logger.warning("%s: dropping %d rows with malformed county ids", path.name, int(bad.sum()))
        df = df[~bad]
    df = df.drop_duplicates("countyFIPS")
    if counties is not None:
        keep = set(counties)
        extra = ~df["countyFIPS"].isin(keep)
        if extra.any():
            logger.warning("%s: dropping %d counties not in the panel", path.name, int(extra.sum()))
        df = df[~extra]
        absent = sorted(keep - set(df["countyFIPS"]))
        if absent:
            logger.warning("%s: %d panel counties have no demographics; imputing medians", path.name, len(absent))
            df = pd.concat([df, pd.DataFrame({"countyFIPS": absent})], ignore_index=True)

    vals = df[list(DEMOGRAPHIC_FEATURES)].apply(pd.to_numeric, errors="coerce")
    vals = vals.where(np.isfinite(vals))
    imputed = []
    for f in DEMOGRAPHIC_FEATURES:
        gaps = vals[f].isna()
        if gaps.any():
            med = vals[f].median()
            if np.isnan(med):
                med = 0.0
            for c in df.loc[gaps.values, "countyFIPS"]:
                imputed.append((c, f))
            logger.warning("%s: imputed %d missing %s values with median %g", path.name, int(gaps.sum()), f, med)
            vals[f] = vals[f].fillna(med)
    order = np.argsort(df["countyFIPS"].to_numpy(), kind="stable")
    return DemographicsTable(
        counties=tuple(df["countyFIPS"].to_numpy()[order]),
        values=vals.to_numpy(dtype=float)[order],
        imputed=tuple(imputed),
    )


@dataclass(frozen=True)
class HospitalTable:
    hospital_ids: tuple[str, ...]
    counties: tuple[str, ...]
    employees: np.ndarray

    def __len__(self) -> int:
        return len(self.hospital_ids)

    def by_county(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for i, c in enumerate(self.counties):
            out.setdefault(c, []).append(i)
        return out


def load_hospitals(path, counties: Iterable[str] | None = None) -> HospitalTable:
    path = Path(path)
    df = pd.read_csv(path, dtype=str, comment="#")
    for col in ("hospital_id", "countyFIPS", "employees"):
        if col not in df.columns:
            raise IngestError(f"{path}: missing column {col!r}")
    df["countyFIPS"] = [normalize_fips(x) for x in df["countyFIPS"]]
    bad = df["countyFIPS"].isna()
    if counties is not None:
        bad |= ~df["countyFIPS"].isin(set(counties))
    if bad.any():
        logger.warning("%s: dropping %d hospitals with unknown counties", path.name, int(bad.sum()))
        df = df[~bad]
    emp = pd.to_numeric(df["employees"], errors="coerce").fillna(0).clip(lower=0).to_numpy(dtype=float)
    return HospitalTable(
        hospital_ids=tuple(df["hospital_id"].astype(str)),
        counties=tuple(df["countyFIPS"]),
        employees=emp,
    )


def load_interventions(path, counties: Iterable[str] | None = None) -> dict[str, dt.date]:
    """Read ``countyFIPS,date`` rows giving when social distancing began."""
    df = pd.read_csv(path, dtype=str, comment="#")
    out: dict[str, dt.date] = {}
    keep = set(counties) if counties is not None else None
    for a, d in zip(df.iloc[:, 0], df.iloc[:, 1]):
        fips = normalize_fips(a)
        if fips is None or (keep is not None and fips not in keep) or pd.isna(d):
            continue
        out[fips] = _parse_date(d)
    return out


def intervention_offsets(panel: CountyPanel, dates: Mapping[str, dt.date]) -> np.ndarray:
    """Day offsets of intervention dates aligned to the panel; NaN where unknown."""
    out = np.full(panel.n_counties, np.nan)
    for i, c in enumerate(panel.counties):
        if c in dates:
            out[i] = panel.offset(dates[c])
    missing = int(np.isnan(out).sum())
    if missing:
        logger.warning("%d counties lack an intervention date; indicator is 0 for them", missing)
    return out
