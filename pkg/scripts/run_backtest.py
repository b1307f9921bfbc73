"""Rolling backtest with the default ensemble, printing a median-MAPE table.

With ``--data DIR`` the directory must hold deaths.csv, cases.csv and
adjacency.csv (USAFacts-style wide tables). Without it a synthetic panel is
generated. Dates default to March 22 through June 20 2020 when real data is
given.
"""
import argparse
import time
from pathlib import Path

from clepcast.evaluate import CLEP, BacktestConfig, EngineConfig, run_backtest
from clepcast.ingest import load_adjacency, load_panel, neighbor_aggregates
from clepcast.predictors import PredictorKind
from clepcast.synthetic import epidemic_panel


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", type=Path)
    ap.add_argument("--start", default="2020-03-22")
    ap.add_argument("--end", default="2020-06-20")
    ap.add_argument("--out", type=Path, default=Path("out/backtest"))
    ap.add_argument("--all-predictors", action="store_true", help="also score shared and separate exponential")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    if args.data:
        panel = load_panel(args.data / "deaths.csv", args.data / "cases.csv")
        panel = neighbor_aggregates(panel, load_adjacency(args.data / "adjacency.csv", panel.counties))
        start, end = panel.offset(args.start), panel.offset(args.end)
    else:
        panel, _ = epidemic_panel(100, 90, seed=0)
        start, end = 30, panel.n_days - 1

    extra = (PredictorKind.SHARED, PredictorKind.SEPARATE_EXPONENTIAL) if args.all_predictors else ()
    cfg = BacktestConfig(start=start, end=end, engine=EngineConfig(extra=extra, workers=args.workers))
    tic = time.perf_counter()
    report = run_backtest(panel, cfg)
    report.write(args.out)

    print(f"{panel.n_counties} counties, {panel.date(start)}..{panel.date(end)}, {time.perf_counter() - tic:.1f}s")
    metrics = report.summary["metrics"]
    names = sorted(metrics, key=lambda n: (n == CLEP, n))
    print(f"{'median MAPE':18s}" + "".join(f"{k + '-day':>10s}" for k in map(str, cfg.horizons)))
    for name in names:
        row = "".join(f"{metrics[name][str(k)]['mape']['median']:10.2f}" for k in cfg.horizons)
        print(f"{name:18s}{row}")
    for k, iv in report.summary["intervals"].items():
        print(f"MEPI {k:>2s}-day: mean coverage {iv['mean_coverage']:.3f}, "
              f"median normalized length {iv['normalized_length']['median']:.3f}")
    print(f"outputs in {args.out}")


if __name__ == "__main__":
    main()
