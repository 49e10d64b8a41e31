"""Command-line entry point.

Subcommands: ingest, synth, train, eval, compare, export-curves. Exit codes:
0 success, 1 validation error (bad flags, config, or input format), 2
runtime error. All messages on failure go to stderr with an ``error:``
prefix. Every random choice derives from the single ``seed`` config key, so
re-running a subcommand with identical inputs reproduces identical output
payloads (the wall_time_s timing field aside).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from glob import glob

from .errors import CdrFormatError, ConfigError, InvalidQueryError, ShapeError
from .ingest import SynthParams, clean_events, generate_synthetic, parse_cdr_csv, read_event_csv, write_event_csv
from .metrics import mann_whitney_u
from .subgraph import drnl_label, extract_enclosing_subgraph, format_subgraph
from .training import (
    MetricsReport,
    TrainConfig,
    chronological_split,
    evaluate_from_checkpoint,
    export_curves,
    masked_train_indices,
    report_to_json,
    save_model,
    train_run,
)


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


# flag name -> config key (only these may override the config file)
_OVERRIDES = {
    "model": "model", "seed": "seed", "epochs": "epochs", "batch_size": "batch_size",
    "lr": "lr", "k": "k", "cap": "cap", "d_mem": "d_mem", "d_time": "d_time",
    "embedding": "embedding", "unseen_frac": "unseen_frac", "patience": "patience",
    "neg_per_pos": "neg_per_pos", "dropout": "dropout", "l_max": "l_max",
    "threads": "threads",
}


def _build_parser() -> _Parser:
    p = _Parser(prog="tgnseal", description="Dynamic-graph link prediction toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="raw CDR CSV -> canonical event CSV")
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)

    sp = sub.add_parser("synth", help="generate a seeded synthetic event CSV")
    sp.add_argument("--output", required=True)
    sp.add_argument("--nodes", type=int, default=100)
    sp.add_argument("--events", type=int, default=1000)
    sp.add_argument("--p-repeat", type=float, default=0.4)
    sp.add_argument("--p-triad", type=float, default=0.4)
    sp.add_argument("--rate", type=float, default=1.0)
    sp.add_argument("--mean-duration", type=float, default=60.0)
    sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("train", help="train one model, write report + checkpoint")
    sp.add_argument("--events", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--config", default=None, help="flat JSON config (flags override)")
    sp.add_argument("--dump-subgraphs", type=int, default=0,
                    help="debug: dump the first N labeled training subgraphs")
    _add_override_flags(sp)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a region")
    sp.add_argument("--events", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--region", choices=("val", "test"), default="test")
    sp.add_argument("--config", default=None)
    _add_override_flags(sp)

    sp = sub.add_parser("compare", help="Mann-Whitney U over two run directories")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--metric", choices=("ap_seen", "ap_unseen"), default="ap_unseen")
    sp.add_argument("--alternative", choices=("two-sided", "greater", "less"),
                    default="two-sided")

    sp = sub.add_parser("export-curves", help="dump loss/AP curves as CSV")
    sp.add_argument("--runs", required=True)
    sp.add_argument("--out", required=True)
    return p


def _add_override_flags(sp):
    sp.add_argument("--model", choices=("tgn_seal", "tgn_id", "tgn_time"), default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--k", type=int, default=None)
    sp.add_argument("--cap", type=int, default=None)
    sp.add_argument("--d-mem", dest="d_mem", type=int, default=None)
    sp.add_argument("--d-time", dest="d_time", type=int, default=None)
    sp.add_argument("--embedding", choices=("identity", "time_projection"), default=None)
    sp.add_argument("--unseen-frac", dest="unseen_frac", type=float, default=None)
    sp.add_argument("--patience", type=int, default=None)
    sp.add_argument("--neg-per-pos", dest="neg_per_pos", type=int, default=None)
    sp.add_argument("--dropout", type=float, default=None)
    sp.add_argument("--l-max", dest="l_max", type=int, default=None)
    sp.add_argument("--threads", type=int, default=None)


def _load_config(args) -> TrainConfig:
    doc = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: config must be a flat JSON object")
    for flag, key in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            doc[key] = value
    return TrainConfig.from_dict(doc)


def _read_reports(run_dir) -> list[dict]:
    reports = []
    for path in sorted(glob(os.path.join(run_dir, "*.json"))):
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if isinstance(doc, dict) and "model" in doc and "loss_curve" in doc:
            reports.append(doc)
    if not reports:
        raise ConfigError(f"no run reports found under {run_dir}")
    return reports


def _cmd_ingest(args) -> int:
    records, report = parse_cdr_csv(args.input)
    stream = clean_events(records)
    write_event_csv(stream, args.output)
    print(f"{len(stream)} events written to {args.output} "
          f"({report.parsed} rows parsed, {report.num_skipped} skipped)")
    return 0


def _cmd_synth(args) -> int:
    params = SynthParams(p_repeat=args.p_repeat, p_triad=args.p_triad,
                         rate=args.rate, mean_duration=args.mean_duration)
    stream = generate_synthetic(args.nodes, args.events, params, seed=args.seed)
    write_event_csv(stream, args.output)
    print(f"{len(stream)} events written to {args.output}")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args)
    stream = read_event_csv(args.events)
    os.makedirs(args.out, exist_ok=True)
    if args.dump_subgraphs > 0:
        _dump_subgraphs(stream, config, args.out, args.dump_subgraphs)
    report, model = train_run(stream, config)
    report_path = os.path.join(args.out, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report_to_json(report))
        fh.write("\n")
    save_model(os.path.join(args.out, "checkpoint.json"), model)
    print(f"model={report.model} seed={report.seed} "
          f"ap_seen={report.ap_seen} ap_unseen={report.ap_unseen}")
    return 0


def _dump_subgraphs(stream, config: TrainConfig, out_dir, count: int):
    from .events import build_adjacency

    split = chronological_split(stream, config.train_frac, config.val_frac,
                                config.unseen_frac, config.seed)
    adj = build_adjacency(stream)
    blocks = []
    for eidx in masked_train_indices(stream, split)[:count]:
        e = stream.events[eidx]
        sub = extract_enclosing_subgraph(adj, e.src, e.dst, e.ts, config.k, config.cap)
        drnl_label(sub, config.l_max)
        blocks.append(format_subgraph(sub))
    with open(os.path.join(out_dir, "subgraphs.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(blocks))


def _cmd_eval(args) -> int:
    config = _load_config(args)
    stream = read_event_csv(args.events)
    result = evaluate_from_checkpoint(stream, config, args.checkpoint, args.region)
    print(json.dumps(result, sort_keys=True))
    return 0


def _cmd_compare(args) -> int:
    sample_a = [doc[args.metric] for doc in _read_reports(args.a) if doc.get(args.metric) is not None]
    sample_b = [doc[args.metric] for doc in _read_reports(args.b) if doc.get(args.metric) is not None]
    if not sample_a or not sample_b:
        raise ConfigError(f"metric {args.metric} missing from one of the run sets")
    u, p = mann_whitney_u(sample_a, sample_b, alternative=args.alternative)
    print(f"U={u} p={p!r} n_a={len(sample_a)} n_b={len(sample_b)}")
    return 0


def _cmd_export_curves(args) -> int:
    reports = []
    for doc in _read_reports(args.runs):
        reports.append(MetricsReport(
            model=doc["model"], seed=doc["seed"], ap_seen=doc.get("ap_seen"),
            ap_unseen=doc.get("ap_unseen"), loss_curve=doc["loss_curve"],
            val_ap_curve=doc["val_ap_curve"], wall_time_s=doc.get("wall_time_s", 0.0),
            config=doc.get("config", {}),
        ))
    export_curves(reports, args.out)
    print(f"curves for {len(reports)} runs written to {args.out}")
    return 0


_DISPATCH = {
    "ingest": _cmd_ingest,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
    "export-curves": _cmd_export_curves,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _DISPATCH[args.command](args)
    except (_ArgError, ConfigError, CdrFormatError, InvalidQueryError,
            ShapeError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse -h and friends
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
