"""Command-line surface: corpus generation, training, sweeps, cost reports, eval.

Exit codes are a stable contract: 0 success, 2 usage/config error,
3 numeric abort. The env var CAPVIT_OUT overrides the default output root.
"""

from __future__ import annotations

import argparse
import copy
import csv
import sys
from pathlib import Path

from . import costmodel, plotting
from .config import (
    corpus_spec_from,
    dump_resolved,
    load_config,
    model_config_from,
    output_root,
    parse_seed_range,
    train_config_from,
)
from .data.corpus import Corpus, CorpusSpec, max_caption_len, write_shards
from .data.vocab import Vocab, save_vocab
from .errors import CapvitError, ConfigError, NumericError
from .probe import exact_match, linear_probe, make_task, perplexity
from .trainer import load_pipeline, run_training

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _corpus_overrides(args) -> dict:
    out: dict = {}
    if getattr(args, "seeds", None):
        out["seeds"] = args.seeds
    if getattr(args, "mode", None):
        out["mode"] = args.mode
    if getattr(args, "noise", None) is not None:
        out["noise"] = args.noise
    if getattr(args, "res", None):
        out["resolution"] = args.res
    return out


def _train_overrides(args) -> dict:
    out: dict = {}
    mapping = [
        ("stages", "stages"),
        ("batch", "batch_size"),
        ("lr", "peak_lr"),
        ("warmup", "warmup"),
        ("lambda_gen", "lambda_gen"),
        ("dtype", "dtype"),
    ]
    for flag, key in mapping:
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = value
    return out


def _resolve(args) -> dict:
    overrides: dict = {}
    if getattr(args, "pipeline", None):
        overrides["pipeline"] = args.pipeline
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    corpus = _corpus_overrides(args)
    if corpus:
        overrides["corpus"] = corpus
    train = _train_overrides(args)
    if train:
        overrides["train"] = train
    if getattr(args, "keep_ratio", None) is not None:
        overrides["model"] = {"keep_ratio": args.keep_ratio}
    return load_config(getattr(args, "config", None), overrides)


def _out_dir(args, default_leaf: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return output_root() / default_leaf


def cmd_gen_corpus(args) -> int:
    resolved = _resolve(args)
    out_dir = _out_dir(args, "corpus")
    spec = corpus_spec_from(resolved)
    vocab = Vocab.full_grammar()
    out_dir.mkdir(parents=True, exist_ok=True)
    shards = write_shards(spec, out_dir, vocab, args.shard_size)
    save_vocab(vocab, out_dir / "vocab.tsv")
    dump_resolved(resolved, out_dir)
    for path, digest, count in shards:
        print(f"{path}  sha256={digest}  records={count}")
    return EXIT_OK


def _build_run(resolved):
    train_cfg = train_config_from(resolved)
    first_res = train_cfg.stages[0].resolution
    spec = corpus_spec_from(resolved, resolution=first_res)
    vocab = Vocab.full_grammar()
    caption_len = max_caption_len(spec)
    model = model_config_from(resolved, first_res, vocab, caption_len)
    return model, train_cfg, spec, vocab


def cmd_train(args) -> int:
    resolved = _resolve(args)
    out_dir = _out_dir(args, "train")
    model, train_cfg, spec, vocab = _build_run(resolved)
    dump_resolved(resolved, out_dir)
    result = run_training(model, train_cfg, spec, out_dir=out_dir, vocab=vocab)
    plotting.save_loss_curve(result.rows, out_dir / "loss_curve.png")
    final = result.rows[-1].loss if result.rows else float("nan")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {out_dir / 'metrics.csv'} ({len(result.rows)} rows), final loss {final:.4f}")
    return EXIT_OK


def cmd_sweep_keep_ratio(args) -> int:
    resolved = _resolve(args)
    out_dir = _out_dir(args, "sweep")
    try:
        ratios = [float(r) for r in args.ratios.split(",") if r.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --ratios {args.ratios!r}") from exc
    if not ratios:
        raise ConfigError("--ratios is empty")
    dump_resolved(resolved, out_dir)

    rows = []
    for ratio in ratios:
        run_resolved = copy.deepcopy(resolved)
        run_resolved["model"]["keep_ratio"] = ratio
        model, train_cfg, spec, vocab = _build_run(run_resolved)
        result = run_training(model, train_cfg, spec, vocab=vocab)
        corpus = Corpus.from_spec(
            CorpusSpec(spec.seed_start, spec.seed_stop, spec.mode, spec.noise,
                       train_cfg.stages[-1].resolution),
            vocab,
        )
        em = exact_match(result.pipeline, corpus)
        task = make_task("shape", train_seeds=(spec.seed_start, spec.seed_stop + 4000),
                         test_seeds=(200000, 204000))
        acc = linear_probe(result.pipeline, task, per_class_train=args.probe_per_class,
                           per_class_test=args.probe_per_class)
        rows.append(
            {
                "keep_ratio": ratio,
                "final_loss": result.rows[-1].loss,
                "exact_match": em,
                "probe_acc": acc,
                "steps": len(result.rows),
            }
        )
        print(f"keep_ratio={ratio}: loss={rows[-1]['final_loss']:.4f} "
              f"exact_match={em:.3f} probe_acc={acc:.3f}")

    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "sweep.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    plotting.save_sweep_figure(rows, out_dir / "sweep.png")
    print(f"wrote {csv_path} ({len(rows)} rows)")
    return EXIT_OK


def cmd_cost(args) -> int:
    out_dir = _out_dir(args, "cost")
    pipelines = [p.strip() for p in args.pipelines.split(",") if p.strip()]
    for p in pipelines:
        if p not in (costmodel.V1, costmodel.V2):
            raise ConfigError(f"unknown pipeline {p!r}; valid: v1, v2")
    overrides = {}
    if args.batch is not None:
        overrides["batch_size"] = args.batch
    if args.devices is not None:
        overrides["devices"] = args.devices
    if args.keep_ratio is not None:
        overrides["keep_ratio"] = args.keep_ratio
    reports = [
        costmodel.pipeline_flops(costmodel.spec_from_preset(name, pipe, **overrides))
        for name in args.preset
        for pipe in pipelines
    ]
    table = costmodel.emit_table(reports)
    print(table, end="")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "cost.txt").write_text(table, encoding="utf-8")
    (out_dir / "cost.csv").write_text(costmodel.emit_csv(reports), encoding="utf-8")
    plotting.save_cost_figure(costmodel.report_rows(reports), out_dir / "cost.png")
    return EXIT_OK


def cmd_eval(args) -> int:
    out_dir = _out_dir(args, "eval")
    pipeline, _state, _train_cfg, step = load_pipeline(args.checkpoint)
    start, stop = parse_seed_range(args.seeds)
    spec = CorpusSpec(start, stop, args.mode, args.noise, pipeline.encoder_cfg.image_size)
    corpus = Corpus.from_spec(spec)
    rows = []
    if args.metric in ("all", "exact_match"):
        rows.append(("caption", "exact_match", exact_match(pipeline, corpus)))
    if args.metric in ("all", "perplexity"):
        rows.append(("caption", "perplexity", perplexity(pipeline, corpus)))
    if args.metric in ("all", "probe"):
        for task_name in ("shape", "color"):
            task = make_task(task_name)
            acc = linear_probe(pipeline, task, per_class_train=args.probe_per_class,
                               per_class_test=args.probe_per_class)
            rows.append((task_name, "probe_acc", acc))
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "eval.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "metric", "value", "checkpoint", "step"])
        for task_name, metric, value in rows:
            writer.writerow([task_name, metric, f"{value:.6f}", str(args.checkpoint), step])
            print(f"{task_name},{metric},{value:.6f},{args.checkpoint},{step}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capvit",
        description="caption-only vision-encoder pretraining at desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="global seed")
        p.add_argument("--out", help="output directory (default under CAPVIT_OUT)")

    p = sub.add_parser("gen-corpus", help="write corpus shards")
    common(p)
    p.add_argument("--seeds", help="seed range START:STOP")
    p.add_argument("--mode", help="caption mode: alt_text | recap | recap_v2")
    p.add_argument("--noise", type=float, help="web-caption degradation rate")
    p.add_argument("--res", type=int, help="image resolution")
    p.add_argument("--shard-size", type=int, default=10000)
    p.set_defaults(func=cmd_gen_corpus)

    def train_flags(p):
        common(p)
        p.add_argument("--pipeline", help="v1 | v2")
        p.add_argument("--seeds", help="corpus seed range START:STOP")
        p.add_argument("--mode", help="caption mode")
        p.add_argument("--noise", type=float)
        p.add_argument("--keep-ratio", dest="keep_ratio", type=float)
        p.add_argument("--stages", help="RESxSTEPS[xBATCH[xLR[xWARMUP]]],...")
        p.add_argument("--batch", type=int, help="default stage batch size")
        p.add_argument("--lr", type=float, help="default stage peak lr")
        p.add_argument("--warmup", type=int)
        p.add_argument("--lambda-gen", dest="lambda_gen", type=float)
        p.add_argument("--dtype", choices=["float32", "float64"])

    p = sub.add_parser("train", help="run the training curriculum")
    train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep-keep-ratio", help="train once per keep ratio, emit comparison CSV")
    train_flags(p)
    p.add_argument("--ratios", default="1.0,0.9,0.75,0.5,0.35,0.25,0.1")
    p.add_argument("--probe-per-class", type=int, default=25)
    p.set_defaults(func=cmd_sweep_keep_ratio)

    p = sub.add_parser("cost", help="analytic FLOPs and memory comparison")
    common(p)
    p.add_argument("--preset", action="append", required=True,
                   help="backbone preset name (repeatable)")
    p.add_argument("--pipelines", default="v1,v2")
    p.add_argument("--batch", type=int)
    p.add_argument("--devices", type=int)
    p.add_argument("--keep-ratio", dest="keep_ratio", type=float)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seeds", default="100000:100200")
    p.add_argument("--mode", default="recap_v2")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--metric", default="all",
                   choices=["all", "exact_match", "perplexity", "probe"])
    p.add_argument("--probe-per-class", type=int, default=25)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CapvitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
