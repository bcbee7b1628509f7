"""Command-line entry point: ``vidfuse <command> --config run.json [overrides]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .corpus_io import load_corpus, load_judgments, load_queries, read_jsonl, write_json, write_jsonl
from .fusion import FusionMethod
from .metrics import evaluate_run, report_to_tsv
from .model import InvalidInputError, validate_corpus
from .pipeline import (
    ASR_LAYER_PRESETS,
    DROP_PRESETS,
    Pipeline,
    ablation_to_tsv,
    load_config,
    parse_drop,
    run_ablation,
    write_ablation,
)
from .similarity import ReplayMissError

logger = logging.getLogger("vidfuse")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_REPLAY_MISS = 3


def str2bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {value!r}")


def int_list(value: str) -> list[int]:
    return [int(x) for x in value.replace(" ", "").split(",") if x]


def str_list(value: str) -> list[str]:
    return [x for x in value.replace(" ", "").split(",") if x]


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run configuration (JSON)")
    p.add_argument("--output-dir", "--output_dir", dest="output_dir")
    p.add_argument("--use-asr", "--use_asr", dest="use_asr", type=str2bool, metavar="BOOL")
    p.add_argument("--use-refined-events", "--use_refined_events", dest="use_refined_events",
                   type=str2bool, metavar="BOOL")
    p.add_argument("--asr-layers", "--asr_layers", dest="asr_layers", choices=sorted(ASR_LAYER_PRESETS))
    p.add_argument("--frame-count", "--frame_count", dest="frame_count", type=int)
    p.add_argument("--aggregation", help="over_events/over_captions, e.g. max/mean_top3")
    p.add_argument("--fusion", choices=[m.value for m in FusionMethod])
    p.add_argument("--rrf-k", "--rrf_k", dest="rrf_k", type=float)
    p.add_argument("--metric-ks", "--metric_ks", dest="metric_ks", type=int_list)
    p.add_argument("--ndcg-ks", "--ndcg_ks", dest="ndcg_ks", type=int_list)
    p.add_argument("--rank-mode", "--rank_mode", dest="rank_mode", choices=["first", "mean"])
    p.add_argument("--group-by", "--group_by", dest="group_by")
    p.add_argument("--mode", choices=["replay", "live"])
    p.add_argument("--workers", type=int)


OVERRIDE_KEYS = ("output_dir", "use_asr", "use_refined_events", "asr_layers", "frame_count",
                 "aggregation", "fusion", "rrf_k", "metric_ks", "ndcg_ks", "rank_mode",
                 "group_by", "mode", "workers")


def _config(args):
    overrides = {k: getattr(args, k, None) for k in OVERRIDE_KEYS}
    if overrides["output_dir"] is not None:
        overrides["output_dir"] = str(Path(overrides["output_dir"]).resolve())
    return load_config(args.config, **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidfuse", description="Zero-shot text-to-video retrieval")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a corpus for schema and consistency problems")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--corpus", help="corpus manifest")
    g.add_argument("--config")

    for name, text in (
        ("decompose", "prequel/current/sequel events per query"),
        ("transcribe", "audio chain per video"),
        ("describe", "frame captions, video caption and transcript per video"),
        ("score", "five-component score matrices per query"),
    ):
        _add_overrides(sub.add_parser(name, help=text))

    p = sub.add_parser("fuse", help="fuse score matrices into rankings")
    _add_overrides(p)
    p.add_argument("--drop", default="none",
                   help=f"components to remove before fusion: {', '.join(DROP_PRESETS)} or names joined by +; "
                        "write presets as --drop=-event")

    p = sub.add_parser("evaluate", help="metrics for a rankings file")
    p.add_argument("--rankings", required=True)
    p.add_argument("--judgments", required=True)
    p.add_argument("--queries", help="queries file, for group labels")
    p.add_argument("--metric-ks", "--metric_ks", dest="metric_ks", type=int_list, default=[1, 5, 10])
    p.add_argument("--ndcg-ks", "--ndcg_ks", dest="ndcg_ks", type=int_list, default=[])
    p.add_argument("--rank-mode", "--rank_mode", dest="rank_mode", choices=["first", "mean"], default="first")
    p.add_argument("--group-by", "--group_by", dest="group_by")
    p.add_argument("--output", help="write the report JSON here")

    _add_overrides(sub.add_parser("run", help="full pipeline with evaluation"))

    p = sub.add_parser("ablate", help="evaluate a grid of fusion and pipeline variants")
    _add_overrides(p)
    p.add_argument("--grid", help="JSON file mapping axis -> list of values")
    p.add_argument("--fusions", type=str_list, help="comma-separated fusion methods")
    p.add_argument("--drops", type=str_list, help="comma-separated drop presets")
    return parser


def _grid(args) -> dict:
    grid = json.loads(Path(args.grid).read_text(encoding="utf-8")) if args.grid else {}
    if args.fusions:
        grid["fusion"] = args.fusions
    if args.drops:
        grid["drop"] = args.drops
    return grid


def cmd_validate(args) -> int:
    manifest = args.corpus or load_config(args.config).corpus
    c = load_corpus(manifest)
    found = validate_corpus(c.queries, c.videos, c.descriptions, c.judgments, c.dim)
    for v in found:
        print(v)
    print(f"{len(found)} violation(s)")
    return EXIT_FAILED if found else EXIT_OK


def cmd_stage(args) -> int:
    pipe = Pipeline(_config(args))
    pipe.output_dir.mkdir(parents=True, exist_ok=True)
    if args.command == "decompose":
        pipe.write_decompositions(pipe.decompose())
    elif args.command == "transcribe":
        pipe.write_transcripts(pipe.transcribe())
    elif args.command == "describe":
        pipe.write_descriptions(pipe.describe())
    elif args.command == "score":
        pipe.write_matrices(pipe.score())
    elif args.command == "fuse":
        pipe.write_rankings(pipe.fuse(drop=parse_drop(args.drop)))
    print(pipe.output_dir)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    rankings = {r["query_id"]: r["ranking"] for r in read_jsonl(args.rankings)}
    labels = None
    if args.queries:
        labels = {q.id: {"language": q.language, "category": q.category} for q in load_queries(args.queries)}
    report = evaluate_run(rankings, load_judgments(args.judgments), args.metric_ks, args.group_by,
                          ndcg_ks=args.ndcg_ks, rank_mode=args.rank_mode, query_labels=labels)
    if args.output:
        write_json(args.output, report.to_dict())
    sys.stdout.write(report_to_tsv(report))
    return EXIT_OK


def cmd_run(args) -> int:
    pipe = Pipeline(_config(args))
    result = pipe.run()
    sys.stdout.write(report_to_tsv(result.report))
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _config(args)
    rows = run_ablation(config, _grid(args))
    write_ablation(rows, config.output_dir)
    for row in rows:
        stem = "_".join(f"{k}={v}" for k, v in row.cell.items()).replace("/", "-")
        write_jsonl(Path(config.output_dir) / "ablation" / f"{stem}.rankings.jsonl",
                    (row.rankings[q].to_dict() for q in sorted(row.rankings)))
    sys.stdout.write(ablation_to_tsv(rows))
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "decompose": cmd_stage,
    "transcribe": cmd_stage,
    "describe": cmd_stage,
    "score": cmd_stage,
    "fuse": cmd_stage,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ReplayMissError as exc:
        print(f"replay miss: {exc}", file=sys.stderr)
        return EXIT_REPLAY_MISS
    except (InvalidInputError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
