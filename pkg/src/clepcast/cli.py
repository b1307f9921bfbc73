"""Command-line entry point: ``clepcast <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .ensemble import WeightConfig
from .glm import FitConfig
from .evaluate import (
    CLEP,
    BacktestConfig,
    EngineConfig,
    RollingEngine,
    SLOT_LABELS,
    diagnose_errors,
    run_backtest,
    write_csv,
)
from .ingest import (
    CountyPanel,
    IngestError,
    intervention_offsets,
    load_adjacency,
    load_demographics,
    load_hospitals,
    load_interventions,
    load_panel,
    neighbor_aggregates,
)
from .mepi import error_tuples, rank_diagnostic
from .predictors import InsufficientDataError, PredictorKind, PredictorOptions
from .severity import severity_index

logger = logging.getLogger("clepcast")


class CliError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("inputs")
    g.add_argument("--deaths", required=True, help="wide cumulative deaths CSV")
    g.add_argument("--cases", help="wide cumulative cases CSV")
    g.add_argument("--adjacency", help="countyFIPS,neighborFIPS pairs")
    g.add_argument("--demographics", help="static county features CSV")
    g.add_argument("--hospitals", help="hospital_id,countyFIPS,employees CSV")
    g.add_argument("--interventions", help="countyFIPS,date of first social distancing")
    g.add_argument("--no-clean", action="store_true", help="keep downticks in cumulative series")

    m = p.add_argument_group("model")
    m.add_argument("--ensemble", default="expanded_shared,linear",
                   help="comma-separated CLEP members (default: expanded_shared,linear)")
    m.add_argument("--predictors", default="", help="extra predictors to evaluate alongside the ensemble")
    m.add_argument("--mu", type=float, default=0.5)
    m.add_argument("--c", type=float, default=1.0)
    m.add_argument("--weight-window", type=int, default=7)
    m.add_argument("--loss-horizon", type=int, default=3)
    m.add_argument("--transform", choices=("sqrt", "log1p"), default="sqrt")
    m.add_argument("--mepi-window", type=int, default=5)
    m.add_argument("--unclamped", action="store_true", help="drop the last-observed floor on MEPI lower bounds")
    m.add_argument("--weekday", action="store_true", help="add the Sunday/Monday indicator")
    m.add_argument("--social-distancing", action="store_true", help="add the social-distancing indicator")
    m.add_argument("--max-iter", type=int, default=100, help="GLM iteration limit")
    m.add_argument("--fallback-member", default="linear")

    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clepcast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-check", help="load and validate inputs, print a summary")
    _add_common(p)

    p = sub.add_parser("forecast", help="forecasts, intervals and weights for one as-of date")
    _add_common(p)
    p.add_argument("--as-of", help="last day of data to use (default: last date in the file)")
    p.add_argument("--horizons", type=int, default=14, help="forecast days 1..K")

    p = sub.add_parser("backtest", help="rolling evaluation over a date range")
    _add_common(p)
    p.add_argument("--start", required=True)
    p.add_argument("--end", required=True)
    p.add_argument("--horizons", default="3,5,7,14", help="comma-separated evaluation horizons")
    p.add_argument("--threshold", type=int, default=10)

    p = sub.add_parser("diagnose", help="exchangeability rank diagnostic")
    p.add_argument("--errors", help="CSV of countyFIPS,day,horizon,delta")
    p.add_argument("--synthetic", type=int, default=0, help="use N i.i.d. synthetic error tuples")
    p.add_argument("--deaths", help="run a backtest on this panel and diagnose CLEP errors")
    p.add_argument("--cases")
    p.add_argument("--adjacency")
    p.add_argument("--start")
    p.add_argument("--end")
    p.add_argument("--horizons", default="7,14")
    p.add_argument("--mepi-window", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("severity", help="hospital severity index")
    _add_common(p)
    p.add_argument("--as-of")
    return parser


# --- helpers ----------------------------------------------------------------

def _parse_kinds(text: str) -> tuple[PredictorKind, ...]:
    return tuple(PredictorKind.parse(x) for x in text.split(",") if x.strip())


def _load(args, need_neighbors: bool, need_demo: bool):
    panel = load_panel(args.deaths, args.cases, clean=not args.no_clean)
    if need_neighbors:
        if not args.adjacency:
            raise CliError("missing input: --adjacency is required for the expanded shared predictor")
        if not args.cases:
            logger.warning("no --cases file; expanded shared predictor sees zero case counts")
        panel = neighbor_aggregates(panel, load_adjacency(args.adjacency, panel.counties))
    demo = None
    if need_demo:
        if not args.demographics:
            raise CliError("missing input: --demographics is required for the demographics predictor")
        demo = load_demographics(args.demographics, panel.counties).aligned(panel.counties)
    interventions = None
    if getattr(args, "social_distancing", False):
        if not args.interventions:
            raise CliError("missing input: --interventions is required with --social-distancing")
        interventions = intervention_offsets(panel, load_interventions(args.interventions, panel.counties))
    return panel, demo, interventions


def _engine_config(args, max_horizon: int) -> EngineConfig:
    members = _parse_kinds(args.ensemble)
    if not members:
        raise CliError("--ensemble must name at least one predictor")
    extra = _parse_kinds(args.predictors)
    fb = PredictorKind.parse(args.fallback_member) if args.fallback_member else None
    if fb is not None and fb not in members + extra:
        extra = extra + (fb,)
    return EngineConfig(
        members=members,
        extra=extra,
        max_horizon=max_horizon,
        weights=WeightConfig(c=args.c, mu=args.mu, window=args.weight_window,
                             loss_horizon=args.loss_horizon, transform=args.transform),
        mepi_window=args.mepi_window,
        mepi_clamp=not args.unclamped,
        fallback_member=fb,
        options=PredictorOptions(weekday=args.weekday, social_distancing=args.social_distancing,
                                 fit=FitConfig(max_iter=args.max_iter)),
        workers=args.workers,
    )


def _needs(cfg: EngineConfig) -> tuple[bool, bool]:
    kinds = set(cfg.predictors)
    return PredictorKind.EXPANDED_SHARED in kinds, PredictorKind.DEMOGRAPHICS_SHARED in kinds


def _as_of(panel: CountyPanel, text: str | None) -> int:
    t = panel.n_days - 1 if text is None else panel.offset(text)
    if not 0 <= t < panel.n_days:
        raise CliError(f"--as-of {text} is outside the data range {panel.start}..{panel.date(panel.n_days - 1)}")
    return t


def issue_forecast(panel, cfg: EngineConfig, t: int, demo=None, interventions=None):
    """Run the causal engine far enough back that day `t` has full histories."""
    lookback = cfg.max_horizon + cfg.mepi_window - 1 + cfg.warmup
    first = t - lookback
    if first < 0:
        logger.warning("only %d days of history before the as-of date; early weights and intervals are cold-started", t)
        first = 0
    engine = RollingEngine(panel, cfg, demo, interventions)
    result = None
    for result in engine.run(first, t):
        pass
    return result


# --- subcommands ------------------------------------------------------------

def cmd_ingest_check(args) -> dict:
    panel = load_panel(args.deaths, args.cases, clean=not args.no_clean)
    info = {
        "counties": panel.n_counties,
        "first_date": panel.start.isoformat(),
        "last_date": panel.date(panel.n_days - 1).isoformat(),
        "days": panel.n_days,
        "total_deaths_last_day": int(panel.deaths[:, -1].sum()),
        "eligible_last_day": int((panel.deaths[:, -1] >= 10).sum()),
    }
    if args.adjacency:
        g = load_adjacency(args.adjacency, panel.counties)
        info["adjacency_counties"] = len(g.neighbors)
        info["adjacency_unknown_ids"] = sorted(g.unknown)
        info["isolated_counties"] = sum(1 for c in panel.counties if not g[c])
    if args.demographics:
        d = load_demographics(args.demographics, panel.counties)
        info["demographics_imputed"] = len(d.imputed)
    if args.hospitals:
        h = load_hospitals(args.hospitals, panel.counties)
        info["hospitals"] = len(h)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ingest_check.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    print(json.dumps(info, sort_keys=True))
    return info


def cmd_forecast(args) -> dict[str, Path]:
    cfg = _engine_config(args, args.horizons)
    need_nb, need_demo = _needs(cfg)
    panel, demo, inter = _load(args, need_nb, need_demo)
    t = _as_of(panel, args.as_of)
    result = issue_forecast(panel, cfg, t, demo, inter)
    fs = result.forecasts
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    fc = pd.DataFrame(fs.to_records(panel.date),
                      columns=["countyFIPS", "as_of_date", "horizon", "predictor", "value", "fallback_flag"])
    as_of = panel.date(t).isoformat()
    iv_rows = []
    for i, c in enumerate(fs.counties):
        for k in range(1, cfg.max_horizon + 1):
            iv_rows.append((c, as_of, panel.date(t + k).isoformat(), k,
                            result.lower[i, k - 1], result.upper[i, k - 1]))
    iv = pd.DataFrame(iv_rows, columns=["countyFIPS", "as_of_date", "target_date", "horizon", "lower", "upper"])
    w_rows = []
    for i, c in enumerate(fs.counties):
        for j, m in enumerate(cfg.members):
            w_rows.append((c, as_of, m.value, result.weights[i, j]))
    w = pd.DataFrame(w_rows, columns=["countyFIPS", "as_of_date", "predictor", "weight"])
    paths = {"forecasts": out / "forecasts.csv", "intervals": out / "intervals.csv", "weights": out / "weights.csv"}
    write_csv(fc, paths["forecasts"], "forecasts")
    write_csv(iv, paths["intervals"], "intervals")
    write_csv(w, paths["weights"], "weights")
    return paths


def cmd_backtest(args):
    horizons = tuple(int(x) for x in args.horizons.split(","))
    cfg = _engine_config(args, max(horizons))
    need_nb, need_demo = _needs(cfg)
    panel, demo, inter = _load(args, need_nb, need_demo)
    bt = BacktestConfig(start=panel.offset(args.start), end=panel.offset(args.end),
                        horizons=horizons, threshold=args.threshold, engine=cfg)
    report = run_backtest(panel, bt, demo, inter)
    report.write(args.out)
    return report


def _read_error_series(path) -> dict[tuple[str, int], np.ndarray]:
    df = pd.read_csv(path, dtype={"countyFIPS": str}, comment="#")
    out = {}
    for (c, k), grp in df.groupby(["countyFIPS", "horizon"]):
        days = grp["day"].to_numpy(dtype=int)
        s = np.full(days.max() + 1, np.nan)
        s[days] = grp["delta"].to_numpy(dtype=float)
        out[(c, int(k))] = s
    return out


def cmd_diagnose(args) -> pd.DataFrame:
    window = args.mepi_window
    if args.synthetic:
        rng = np.random.default_rng(args.seed)
        tuples = rng.exponential(size=(args.synthetic, window + 1))
        ranks = rank_diagnostic(tuples)
        df = pd.DataFrame([("synthetic", 0, s, float(r), len(tuples)) for s, r in zip(SLOT_LABELS, ranks)],
                          columns=["scope", "horizon", "slot", "mean_rank", "n_tuples"])
    elif args.errors:
        rows, pooled = [], {}
        for (c, k), s in sorted(_read_error_series(args.errors).items()):
            tup = error_tuples(s, k, window)
            if len(tup):
                pooled.setdefault(k, []).append(tup)
                rows += [(c, k, sl, float(r), len(tup)) for sl, r in zip(SLOT_LABELS, rank_diagnostic(tup))]
        for k, parts in sorted(pooled.items()):
            allt = np.vstack(parts)
            rows += [("all", k, sl, float(r), len(allt)) for sl, r in zip(SLOT_LABELS, rank_diagnostic(allt))]
        df = pd.DataFrame(rows, columns=["scope", "horizon", "slot", "mean_rank", "n_tuples"])
    elif args.deaths:
        horizons = tuple(int(x) for x in args.horizons.split(","))
        panel = load_panel(args.deaths, args.cases)
        if not args.adjacency:
            raise CliError("missing input: --adjacency is required for the expanded shared predictor")
        panel = neighbor_aggregates(panel, load_adjacency(args.adjacency, panel.counties))
        start = panel.offset(args.start) if args.start else None
        end = panel.offset(args.end) if args.end else panel.n_days - 1
        cfg = EngineConfig(max_horizon=max(horizons), mepi_window=window)
        if start is None:
            start = max(horizons) + cfg.warmup
        report = run_backtest(panel, BacktestConfig(start=start, end=end, horizons=horizons, engine=cfg))
        df = diagnose_errors(report.errors, panel.counties, horizons, window)
    else:
        raise CliError("diagnose needs one of --synthetic, --errors or --deaths")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(df, out / "rank_diagnostic.csv", "rank_diagnostic")
    return df


def cmd_severity(args) -> pd.DataFrame:
    if not args.hospitals:
        raise CliError("missing input: --hospitals is required for severity")
    cfg = _engine_config(args, 14)
    need_nb, need_demo = _needs(cfg)
    panel, demo, inter = _load(args, need_nb, need_demo)
    t = _as_of(panel, args.as_of)
    result = issue_forecast(panel, cfg, t, demo, inter)
    clep7 = result.forecasts[CLEP][:, 6]
    last = result.forecasts.last_observed
    totals = dict(zip(panel.counties, last))
    new7 = dict(zip(panel.counties, np.maximum(clep7 - last, 0.0)))
    hospitals = load_hospitals(args.hospitals, panel.counties)
    df, _ = severity_index(hospitals, totals, new7)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(df, out / "severity.csv", "severity")
    return df


COMMANDS = {
    "ingest-check": cmd_ingest_check,
    "forecast": cmd_forecast,
    "backtest": cmd_backtest,
    "diagnose": cmd_diagnose,
    "severity": cmd_severity,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (CliError, IngestError, InsufficientDataError, FileNotFoundError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
