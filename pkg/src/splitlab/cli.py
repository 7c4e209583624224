"""Command-line orchestration: run method suites from a TOML config, append
result rows to a CSV, and render comparison tables.

Exit codes: 0 success, 1 runtime failure, 2 invalid config or schema.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import methods as method_registry
from . import protocols
from .accounting import FlopCounter, TrafficLedger
from .config import CSV_COLUMNS, ExperimentConfig, MetricsReport, load_config
from .datakit import ClientSplit, Dataset, PartitionPlan, generate_for_plan, load_csv, partition
from .errors import ValidationError
from .nn import mlp
from .splitting import SplitSpec

_INIT_DOMAIN = 13

METRIC_COLUMNS = ("auroc", "auprc", "f1", "kappa")


def build_partitions(cfg: ExperimentConfig) -> dict[int, ClientSplit]:
    plan = PartitionPlan.proportional(
        cfg.partition.total_train,
        cfg.partition.val_per_client,
        cfg.partition.test_per_client,
        weights=cfg.partition.source_weights,
        train_prevalence=cfg.partition.train_prevalence,
        eval_prevalence=cfg.partition.eval_prevalence,
    )
    if cfg.csv_path is not None:
        dataset = load_csv(cfg.csv_path)
    else:
        dataset = generate_for_plan(
            cfg.seed,
            plan,
            n_features=cfg.synthetic.n_features,
            class_separation=cfg.synthetic.class_separation,
            per_source_shift=cfg.synthetic.source_shift,
        )
    return partition(dataset, plan)


def run_experiment(cfg: ExperimentConfig, method: str) -> protocols.ProtocolOutcome:
    """Train one method end to end and fill its report (metrics included)."""
    method_registry.check_method(method)
    partitions = build_partitions(cfg)
    n_features = partitions[min(partitions)].train.n_features
    base_model = mlp(n_features, list(cfg.hidden_dims), [cfg.seed, _INIT_DOMAIN])
    ledger = TrafficLedger()
    flops = FlopCounter()
    fam = method_registry.family(method)
    common = dict(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        ledger=ledger,
        flops=flops,
        method=method,
    )
    if fam == "centralized":
        ordered = [partitions[cid] for cid in sorted(partitions)]
        pooled = ClientSplit(
            Dataset.concat([p.train for p in ordered]),
            Dataset.concat([p.val for p in ordered]),
            Dataset.concat([p.test for p in ordered]),
        )
        outcome = protocols.train_centralized(
            base_model, pooled, opt_cfg=cfg.optimizer, **common
        )
    elif fam == "fl":
        clients = protocols.make_fl_clients(base_model, partitions)
        outcome = protocols.train_federated(
            clients, base_model, opt_cfg=cfg.optimizer, **common
        )
    else:
        topo = method_registry.topology(method)
        spec = SplitSpec(topo, cfg.cut_index, cfg.tail_len if topo == "nls" else 0)
        clients, server = protocols.make_split_clients(
            base_model, spec, partitions, cfg.optimizer
        )
        if fam == "sl":
            outcome = protocols.train_split(
                clients, server, schedule=method_registry.schedule(method), **common
            )
        elif fam == "sflv2":
            outcome = protocols.train_sflv2(clients, server, **common)
        else:
            common.pop("epochs")
            outcome = protocols.train_sflv3(
                clients, server, rounds=cfg.epochs, local_epochs=cfg.local_epochs, **common
            )
    protocols.evaluate(outcome, threshold=cfg.threshold)
    return outcome


def append_rows(path: Path, reports: list[MetricsReport]) -> None:
    exists = path.exists() and path.stat().st_size > 0
    if exists:
        with open(path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), None)
        if header != list(CSV_COLUMNS):
            raise ValidationError(f"{path}: existing CSV schema does not match")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if not exists:
            writer.writerow(CSV_COLUMNS)
        for report in reports:
            writer.writerow(report.csv_row())


def read_rows(path: Path) -> list[dict[str, str]]:
    if not path.exists():
        raise ValidationError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(CSV_COLUMNS):
            raise ValidationError(f"{path}: CSV schema drift (columns do not match)")
        return [dict(zip(CSV_COLUMNS, row)) for row in reader if row]


def _typed(row: dict[str, str]) -> dict:
    out: dict = dict(row)
    out["seed"] = int(row["seed"])
    out["epochs"] = int(row["epochs"])
    out["best_epoch"] = int(row["best_epoch"])
    for key in ("auroc", "auprc", "f1", "kappa", "wall_s_per_epoch", "flops_avg_client"):
        out[key] = float(row[key])
    for key in ("bytes_train", "bytes_eval", "bytes_model_sync", "flops_server", "flops_averaging"):
        out[key] = int(row[key])
    return out


def render_table(rows: list[dict[str, str]]) -> str:
    """Fixed-column comparison; the best value per metric column is starred
    (ties all starred)."""
    typed = [_typed(r) for r in rows]
    best = {m: max(t[m] for t in typed) for m in METRIC_COLUMNS} if typed else {}
    display_rows = []
    for t in typed:
        cells = [t["method"], str(t["seed"])]
        for m in METRIC_COLUMNS:
            star = "*" if t[m] == best[m] else " "
            cells.append(f"{t[m]:.4f}{star}")
        cells += [
            str(t["epochs"]),
            f"{t['wall_s_per_epoch']:.3f}",
            str(t["bytes_train"]),
            str(t["bytes_eval"]),
            str(t["bytes_model_sync"]),
            str(t["flops_server"]),
            f"{t['flops_avg_client']:.1f}",
            str(t["flops_averaging"]),
            str(t["best_epoch"]),
        ]
        display_rows.append(cells)
    header = list(CSV_COLUMNS)
    widths = [
        max(len(header[i]), *(len(r[i]) for r in display_rows)) if display_rows else len(header[i])
        for i in range(len(header))
    ]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in display_rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.method is not None:
        cfg.methods = (args.method,)
    cfg.validate()
    reports = []
    for method in cfg.methods:
        if method == "sflv3_nls":
            print(
                "note: sflv3_nls extrapolates the round-based server update "
                "to the U-shaped topology (loss at the client tail)"
            )
        outcome = run_experiment(cfg, method)
        r = outcome.report
        reports.append(r)
        print(
            f"{method}: auroc={r.auroc:.4f} auprc={r.auprc:.4f} f1={r.f1:.4f} "
            f"kappa={r.kappa:.4f} best_epoch={r.best_epoch} "
            f"bytes={r.bytes_train + r.bytes_eval + r.bytes_model_sync}"
        )
    append_rows(Path(args.out), reports)
    print(f"wrote {len(reports)} row(s) to {args.out}")
    return 0


def cmd_report(args) -> int:
    rows = read_rows(Path(args.input))
    print(render_table(rows))
    if args.json is not None:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump([_typed(r) for r in rows], fh, indent=2)
        print(f"wrote {args.json}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splitlab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment suite from a TOML config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--method", default=None, help="run only this method id")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default="results.csv", help="CSV to append result rows to")
    p_run.set_defaults(func=cmd_run)

    p_rep = sub.add_parser("report", help="render a results CSV as a comparison table")
    p_rep.add_argument("--in", dest="input", required=True)
    p_rep.add_argument("--json", default=None, help="also dump typed rows as JSON")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
