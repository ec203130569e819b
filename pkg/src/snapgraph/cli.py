"""Command-line pipeline: generate data, profile it, train, and evaluate.

Subcommands:

* ``generate`` -- synthesize an event file and a node-attribute file,
  optionally calibrating the generator to the target temporal indices,
* ``stats``    -- print novelty/reoccurrence/surprise and emit the per-month
  edge decomposition (tea.csv) and edge-lifespan layout (tet.csv),
* ``train``    -- fit one architecture (or the windowed-mean baseline) and
  write a run directory with config, per-epoch metrics, and checkpoint,
* ``evaluate`` -- score run directories on the test months, write report
  files per run plus a combined comparison table.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command is
deterministic given identical inputs and --seed; reruns overwrite
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import edgebank, graphstore, models, synthgen, tempometrics
from .graphstore import GraphStoreError
from .models.training import TrainingError
from .neural import checkpoint

EVENTS_FILE = "events.csv"
NODES_FILE = "nodes.csv"
GENERATION_FILE = "generation.json"
CONFIG_FILE = "config.json"
METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "best.ckpt"
INDICES_FILE = "indices.csv"
COMPARISON_FILE = "comparison.csv"
METRICS_HEADER = "epoch,train_loss,val_mae"
INDICES_HEADER = "novelty,reoccurrence,surprise"
COMPARISON_HEADER = (
    "model,channel,positive,r_negative,h_negative,ave,best,p_vs_redgebank"
)


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_lines(path, header, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for line in lines:
            fh.write(line + "\n")


def _load_pipeline(data_dir, months=None):
    """events + attrs -> filtered, aggregated, split, normalized graph."""
    events_path = os.path.join(data_dir, EVENTS_FILE)
    nodes_path = os.path.join(data_dir, NODES_FILE)
    store = graphstore.ingest_files(events_path, nodes_path, n_months=months)
    store = graphstore.filter_users(store)
    graph = graphstore.aggregate_monthly(store)
    split = graphstore.temporal_split(graph)
    ng = graphstore.normalize(graph, split)
    return graph, split, ng


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    os.makedirs(args.data_dir, exist_ok=True)
    config = synthgen.GenConfig(
        n_nodes=args.nodes, n_months=args.months, rng_seed=args.seed
    )
    doc = {"calibrated": bool(args.calibrate)}
    if args.calibrate:
        result = synthgen.calibrate(config, synthgen.CalibrationTarget())
        config = result.config
        doc["achieved"] = {
            "novelty": result.achieved[0],
            "reoccurrence": result.achieved[1],
            "surprise": result.achieved[2],
        }
        doc["converged"] = result.converged
        doc["iterations"] = result.iterations
    events, attrs = synthgen.generate(config)
    graphstore.write_event_file(os.path.join(args.data_dir, EVENTS_FILE), events)
    graphstore.write_node_file(os.path.join(args.data_dir, NODES_FILE), attrs)
    doc["config"] = {
        "n_nodes": config.n_nodes,
        "n_months": config.n_months,
        "mean_degree": config.mean_degree,
        "tie_persistence": config.tie_persistence,
        "novel_tie_rate": config.novel_tie_rate,
        "december_boost": config.december_boost,
        "start_year": config.start_year,
        "start_month": config.start_month,
        "rng_seed": config.rng_seed,
    }
    _write_json(os.path.join(args.data_dir, GENERATION_FILE), doc)
    print(f"wrote {len(events)} events for {len(attrs)} nodes to {args.data_dir}")
    return 0


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------


def cmd_stats(args) -> int:
    graph, split, _ = _load_pipeline(args.data_dir, months=args.months)
    out_dir = args.run_dir or args.data_dir
    os.makedirs(out_dir, exist_ok=True)
    cutoff = split.val_cutoff
    nov = tempometrics.novelty(graph)
    reo = tempometrics.reoccurrence(graph, cutoff)
    sur = tempometrics.surprise(graph, cutoff)
    print(f"novelty={nov!r} reoccurrence={reo!r} surprise={sur!r}")
    _write_lines(
        os.path.join(out_dir, INDICES_FILE), INDICES_HEADER, [f"{nov!r},{reo!r},{sur!r}"]
    )
    tempometrics.write_tea_csv(
        os.path.join(out_dir, "tea.csv"), tempometrics.tea_series(graph)
    )
    tempometrics.write_tet_csv(
        os.path.join(out_dir, "tet.csv"), tempometrics.tet_layout(graph, cutoff)
    )
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    graph, split, ng = _load_pipeline(args.data_dir, months=args.months)
    os.makedirs(args.run_dir, exist_ok=True)
    doc = {
        "architecture": args.arch,
        "seed": args.seed,
        "norm_stats": ng.stats.to_dict(),
        "split": [split.train_cutoff, split.val_cutoff, split.test_end],
    }
    if args.arch == "redgebank":
        window = args.window
        if window is None:
            window = edgebank.tune_window(graph, split.val_months, range(1, 7))
        doc["window"] = window
        _write_json(os.path.join(args.run_dir, CONFIG_FILE), doc)
        _write_lines(os.path.join(args.run_dir, METRICS_FILE), METRICS_HEADER, [])
        print(f"baseline run with window={window} written to {args.run_dir}")
        return 0

    config = models.ModelConfig(
        architecture=args.arch,
        hidden_dim=args.hidden_dim,
        max_epochs=args.max_epochs,
        patience=args.patience,
        neg_ratio=args.neg_ratio,
        rng_seed=args.seed,
    ).resolved()
    trained = models.train(ng, split, config, log=print)
    doc["model_config"] = {
        "hidden_dim": config.hidden_dim,
        "chebyshev_K": config.chebyshev_K,
        "learning_rate": config.learning_rate,
        "loss_weighting": config.loss_weighting,
        "neg_ratio": config.neg_ratio,
        "patience": config.patience,
        "max_epochs": config.max_epochs,
        "rng_seed": config.rng_seed,
    }
    doc["best_epoch"] = trained.best_epoch
    _write_json(os.path.join(args.run_dir, CONFIG_FILE), doc)
    _write_lines(
        os.path.join(args.run_dir, METRICS_FILE),
        METRICS_HEADER,
        [f"{c.epoch},{c.train_loss!r},{c.val_mae!r}" for c in trained.curves],
    )
    checkpoint.save_checkpoint(
        os.path.join(args.run_dir, CHECKPOINT_FILE), trained.model.state_entries()
    )
    print(
        f"trained {args.arch} for {len(trained.curves)} epochs "
        f"(best epoch {trained.best_epoch}); run directory {args.run_dir}"
    )
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _predictor_from_run(run_dir, ng):
    config_path = os.path.join(run_dir, CONFIG_FILE)
    with open(config_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    arch = doc["architecture"]
    stats = graphstore.NormStats.from_dict(doc["norm_stats"])
    if arch == "redgebank":
        predictor = models.RedgeBankPredictor(doc["window"])
        predictor.stats = stats
        return arch, stats, predictor.bind(ng)
    mc = doc["model_config"]
    config = models.ModelConfig(
        architecture=arch,
        hidden_dim=mc["hidden_dim"],
        chebyshev_K=mc["chebyshev_K"],
        learning_rate=mc["learning_rate"],
        loss_weighting=mc["loss_weighting"],
        neg_ratio=mc["neg_ratio"],
        rng_seed=mc["rng_seed"],
    )
    model = models.build(config)
    state = checkpoint.load_checkpoint(os.path.join(run_dir, CHECKPOINT_FILE))
    checkpoint.restore_params(model.state_entries(), state)
    return arch, stats, models.ModelPredictor(model, stats).bind(ng)


def _check_stats_consistent(all_stats) -> None:
    first = all_stats[0]
    for other in all_stats[1:]:
        for a, b in (
            (first.edge_mean, other.edge_mean),
            (first.edge_std, other.edge_std),
            (first.node_min, other.node_min),
            (first.node_max, other.node_max),
        ):
            if not np.allclose(a, b):
                raise GraphStoreError(
                    "run directories were trained with different normalization "
                    "statistics and cannot be compared"
                )


def cmd_evaluate(args) -> int:
    _, split, ng = _load_pipeline(args.data_dir, months=args.months)
    by = args.by or []
    rows = []  # (name, report, errors)
    all_stats = []
    for run_dir in args.run_dir:
        name, stats, predictor = _predictor_from_run(run_dir, ng)
        all_stats.append(stats)
        _check_stats_consistent(all_stats)
        report = models.evaluate(
            predictor, ng, split, name, neg_ratio=args.neg_ratio, rng_seed=args.seed
        )
        if "month" not in by:
            report.per_month = None
        if "gender" not in by:
            report.by_gender = None
        if "age" not in by:
            report.by_age = None
        tempometrics.write_report_files(report, run_dir)
        errors = models.positive_errors(predictor, ng, split)
        rows.append((name, report, errors))
        ave = report.ave
        print(f"{name}: ave call={float(ave[0])!r} sms={float(ave[1])!r}")

    baseline = next((r for r in rows if r[0] == "redgebank"), None)
    lines = []
    value_cols = ("positive", "r_negative", "h_negative", "ave")
    for c, channel in enumerate(tempometrics.CHANNELS):
        cells = {}
        for name, report, _ in rows:
            vals = {es: report.cells[es][0][c] for es in tempometrics.EDGE_SETS}
            vals["ave"] = report.ave[c]
            cells[name] = vals
        best = {
            col: min(cells, key=lambda nm: cells[nm][col]) for col in value_cols
        }
        for name, report, errors in rows:
            marks = ";".join(col for col in value_cols if best[col] == name)
            if baseline is None or name == "redgebank":
                p = ""
            else:
                try:
                    _, pv = tempometrics.wilcoxon_signed_rank(errors, baseline[2])
                    p = repr(pv)
                except GraphStoreError:
                    p = ""  # too few informative pairs for the test
            vals = cells[name]
            lines.append(
                f"{name},{channel}," + ",".join(repr(float(vals[col])) for col in value_cols)
                + f",{marks},{p}"
            )
    out = os.path.join(os.path.commonpath([os.path.abspath(d) for d in args.run_dir]), COMPARISON_FILE)
    if len(args.run_dir) == 1:
        out = os.path.join(args.run_dir[0], COMPARISON_FILE)
    _write_lines(out, COMPARISON_HEADER, lines)
    print(f"comparison table written to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------


def _apply_config_file(parser, argv):
    """Load --config JSON as parser defaults; explicit flags still win."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if known.config:
        try:
            with open(known.config, "r", encoding="utf-8") as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config file: {exc}")
        valid = {a.dest for a in parser._actions}
        unknown = set(values) - valid
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        parser.set_defaults(**values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snapgraph",
        description="Snapshot temporal-graph pipeline: generate, profile, train, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of defaults; flags override")
        p.add_argument("--seed", type=int, default=0, help="root random seed")
        p.add_argument("--months", type=int, default=None,
                       help="observation window length in months")

    g = sub.add_parser("generate", help="synthesize event and node files")
    common(g)
    g.add_argument("--data-dir", required=True)
    g.add_argument("--nodes", type=int, default=2000)
    g.add_argument("--calibrate", action="store_true",
                   help="search generator settings matching the target indices")
    g.set_defaults(func=cmd_generate, months=36)

    s = sub.add_parser("stats", help="temporal indices and edge decompositions")
    common(s)
    s.add_argument("--data-dir", required=True)
    s.add_argument("--run-dir", default=None, help="output directory (default: data dir)")
    s.set_defaults(func=cmd_stats)

    t = sub.add_parser("train", help="fit one architecture")
    common(t)
    t.add_argument("--data-dir", required=True)
    t.add_argument("--run-dir", required=True)
    t.add_argument("--arch", required=True,
                   choices=list(models.ARCHITECTURES) + ["redgebank"])
    t.add_argument("--window", type=int, default=None,
                   help="baseline memory window (tuned on validation if omitted)")
    t.add_argument("--hidden-dim", type=int, default=None)
    t.add_argument("--max-epochs", type=int, default=100)
    t.add_argument("--patience", type=int, default=20)
    t.add_argument("--neg-ratio", type=int, default=10)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score run directories on the test months")
    common(e)
    e.add_argument("--data-dir", required=True)
    e.add_argument("--run-dir", action="append", required=True,
                   help="repeatable; each names one training run")
    e.add_argument("--by", action="append", choices=["gender", "age", "month"],
                   help="extra stratified tables (repeatable)")
    e.add_argument("--neg-ratio", type=int, default=10)
    e.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if argv and argv[0] in ("generate", "stats", "train", "evaluate"):
        for action in parser._subparsers._group_actions:
            subparser = action.choices.get(argv[0])
            if subparser is not None:
                _apply_config_file(subparser, argv[1:])
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (GraphStoreError, TrainingError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
