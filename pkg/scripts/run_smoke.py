#!/usr/bin/env python3
"""Run the bundled smoke suite and render the comparison table.

Produces two CSVs under --outdir:
  smoke.csv        one row per method (the documented result schema)
  smoke_epochs.csv per-epoch wall time, cumulative bytes, and flops per method
"""

import argparse
import csv
from pathlib import Path

from splitlab import cli
from splitlab.accounting import EpochReport
from splitlab.config import load_config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/smoke.toml")
    parser.add_argument("--outdir", default="results")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    reports = []
    epoch_rows = []
    for method in cfg.methods:
        outcome = cli.run_experiment(cfg, method)
        reports.append(outcome.report)
        for er in outcome.epoch_reports:
            epoch_rows.append([method] + [str(v) for v in er.csv_row()])
        r = outcome.report
        print(
            f"{method:12s} auroc={r.auroc:.4f} auprc={r.auprc:.4f} "
            f"f1={r.f1:.4f} kappa={r.kappa:.4f} best_epoch={r.best_epoch}"
        )

    results_csv = outdir / "smoke.csv"
    cli.append_rows(results_csv, reports)
    with open(outdir / "smoke_epochs.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", *EpochReport.CSV_COLUMNS])
        writer.writerows(epoch_rows)

    print()
    print(cli.render_table(cli.read_rows(results_csv)))
    print(f"\nwrote {results_csv} and {outdir / 'smoke_epochs.csv'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
