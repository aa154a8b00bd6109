"""Command-line interface.

Exit codes: 0 success, 2 usage/config error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .bench import (
    ConfigError,
    Report,
    RetrievalRun,
    StageError,
    SyntheticSpec,
    eval_map,
    gen_synthetic,
    load_config,
    run_experiment,
    topk_accuracy,
)
from .codec import (
    LossWeights,
    QuantizerConfig,
    read_codebook,
    read_codes,
    read_vectors,
    write_codebook,
    write_codes,
    write_vectors,
)
from .lut import build_class_lut, build_sym_lut, classify_codes, format_results, search, search_codebook
from .model import encode_many, intra_normalize, load_model, preset, save_model, train
from .pq import pq_encode_many, pq_train, quantization_error

log = logging.getLogger("dpq")

EXIT_CONFIG = 2
EXIT_STAGE = 3


def _emit(args, report: Report) -> None:
    if args.format == "json-lines":
        sys.stdout.write(report.json_lines())
    else:
        sys.stdout.write(report.table())


def _load_quantizer(args):
    """Either a DPQ model or a PQ codebook, whichever was given."""
    if bool(args.model) == bool(args.codebook):
        raise ConfigError("give exactly one of --model or --codebook")
    if args.model:
        model = load_model(args.model)
        if getattr(args, "normalize", False):
            model = intra_normalize(model)
        return model, None
    return None, read_codebook(args.codebook)


def cmd_gen(args) -> None:
    spec = SyntheticSpec(args.classes, args.dim, args.per_class, args.spread, args.seed)
    write_vectors(args.output, gen_synthetic(spec))


def cmd_train_pq(args) -> None:
    data = read_vectors(args.input)
    cb = pq_train(data.vectors, args.M, args.K, args.iters, args.seed, args.threads)
    write_codebook(args.output, cb)
    report = Report(config={})
    report.add("quantization_error", "pq", args.M * (args.K.bit_length() - 1), quantization_error(data, cb))
    _emit(args, report)


def cmd_train_dpq(args) -> None:
    data = read_vectors(args.input)
    if data.labels is None:
        raise ConfigError(f"{args.input} has no labels")
    num_classes = args.classes or int(data.labels.max()) + 1
    weights = LossWeights(args.w_softmax, args.w_central, args.w_gini_batch, args.w_gini_sample, args.w_weight_decay)
    common = dict(
        weights=weights,
        seed=args.seed,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        momentum=args.momentum,
        hard_path=not args.soft_only,
    )
    shape = {k: v for k, v in (("M", args.M), ("K", args.K), ("D", args.D), ("hidden_dim", args.hidden),
                               ("front_dim", args.front_dim)) if v is not None}
    if args.preset:
        cfg = preset(args.preset, data.dim, num_classes, **shape, **common)
    else:
        shape.setdefault("M", 4)
        shape.setdefault("K", 16)
        cfg = QuantizerConfig(input_dim=data.dim, num_classes=num_classes, **shape, **common)

    def on_epoch(stats):
        record = {"epoch": stats.epoch, "lr": stats.learning_rate, **stats.terms.as_dict(),
                  "max_cluster_usage": stats.max_usage_fraction}
        if args.format == "json-lines":
            print(json.dumps(record, sort_keys=True), file=sys.stderr)
        else:
            log.info("epoch %(epoch)d loss %(total).6f max-usage %(max_cluster_usage).3f", record)

    save_model(args.output, train(data, cfg, callback=on_epoch))


def cmd_encode(args) -> None:
    model, cb = _load_quantizer(args)
    data = read_vectors(args.input)
    if model is not None:
        write_codes(args.output, encode_many(data.vectors, model), model.K)
    else:
        write_codes(args.output, pq_encode_many(data.vectors, cb), cb.K)


def cmd_search(args) -> None:
    model, cb = _load_quantizer(args)
    queries = read_vectors(args.queries)
    db, K = read_codes(args.database)
    if K != (model.K if model else cb.K):
        raise ConfigError(f"database codes use K={K}, quantizer has K={model.K if model else cb.K}")
    k = args.k or len(db)
    sym = build_sym_lut(model.codebook if model else cb) if args.mode == "symmetric" else None
    out = open(args.output, "w") if args.output else sys.stdout
    try:
        for qid, q in enumerate(queries.vectors):
            if model is not None:
                ranking = search(q, db, model, args.mode, k, sym_lut=sym, threads=args.threads)
            else:
                ranking = search_codebook(q, db, cb, args.mode, k, sym_lut=sym, threads=args.threads)
            out.write(format_results(qid, ranking))
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_classify(args) -> None:
    model = load_model(args.model)
    codes, K = read_codes(args.codes)
    if K != model.K:
        raise ConfigError(f"codes use K={K}, model has K={model.K}")
    scores = classify_codes(codes, build_class_lut(model))
    if args.labels:
        labels = read_vectors(args.labels).labels
        if labels is None or len(labels) != len(codes):
            raise ConfigError("--labels must be a labelled DPQV file with one row per code")
        report = Report(config={})
        bits = model.M * (model.K.bit_length() - 1)
        report.add("top1", "dpq-hard", bits, topk_accuracy(scores, labels, 1))
        report.add("top5", "dpq-hard", bits, topk_accuracy(scores, labels, min(5, model.config.num_classes)))
        _emit(args, report)
    else:
        for i, c in enumerate(np.argmax(scores, axis=1)):
            print(f"{i}\t{c}")


def _read_results(path: str, n_queries: int) -> np.ndarray:
    rows: dict[int, list[tuple[int, int]]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            qid, rank, idx, _ = line.split("\t")
            rows.setdefault(int(qid), []).append((int(rank), int(idx)))
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: malformed result line") from exc
    if sorted(rows) != list(range(n_queries)):
        raise ConfigError(f"{path} does not cover queries 0..{n_queries - 1}")
    lengths = {len(v) for v in rows.values()}
    if len(lengths) != 1:
        raise ConfigError("every query must have the same number of results")
    return np.array([[idx for _, idx in sorted(rows[q])] for q in range(n_queries)])


def cmd_eval(args) -> None:
    queries = read_vectors(args.queries)
    db = read_vectors(args.database)
    if queries.labels is None or db.labels is None:
        raise ConfigError("eval needs labelled query and database DPQV files")
    rankings = _read_results(args.results, len(queries))
    report = Report(config={})
    report.add("mAP", args.mode_tag, args.bits, eval_map(RetrievalRun(queries.labels, rankings, db.labels)))
    _emit(args, report)


def cmd_experiment(args) -> None:
    overrides = {"seed": args.seed} if args.seed is not None else {}
    overrides["threads"] = args.threads
    cfg = load_config(args.config, overrides)
    report = run_experiment(cfg)
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n")
    _emit(args, report)


def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--seed", type=int, default=default(None), help="RNG seed (default 0; experiment: config value)")
    parser.add_argument("--threads", type=int, default=default(1))
    parser.add_argument("--format", choices=("text", "json-lines"), default=default("text"))
    parser.add_argument("-v", "--verbose", action="count", default=default(0))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpq", description="Deep product quantization toolkit")
    _add_global_flags(parser, suppress=False)
    # global flags may also follow the subcommand; suppressed defaults keep the top-level values
    shared = argparse.ArgumentParser(add_help=False)
    _add_global_flags(shared, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[shared], help="generate a synthetic labelled DPQV file")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--spread", type=float, default=0.3)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train-pq", parents=[shared], help="train an unsupervised PQ codebook")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-M", type=int, required=True)
    p.add_argument("-K", type=int, required=True)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train_pq)

    p = sub.add_parser("train-dpq", parents=[shared], help="train a DPQ model")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--preset", choices=("cifar-style", "crossdomain-style"))
    p.add_argument("-M", type=int)
    p.add_argument("-K", type=int)
    p.add_argument("-D", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--front-dim", type=int)
    p.add_argument("--classes", type=int, help="number of classes (default: max label + 1)")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    defaults = LossWeights()
    for name in ("softmax", "central", "gini_batch", "gini_sample", "weight_decay"):
        p.add_argument(f"--w-{name.replace('_', '-')}", type=float, default=getattr(defaults, name))
    p.add_argument("--soft-only", action="store_true", help="drop the hard-path losses")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train_dpq)

    p = sub.add_parser("encode", parents=[shared], help="compress vectors into a DPQZ code file")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--model")
    p.add_argument("--codebook")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("search", parents=[shared], help="rank database codes for each query vector")
    p.add_argument("--queries", required=True)
    p.add_argument("--database", required=True, help="DPQZ code file")
    p.add_argument("--model")
    p.add_argument("--codebook")
    p.add_argument("--mode", choices=("symmetric", "asymmetric"), default="asymmetric")
    p.add_argument("--normalize", action="store_true", help="intra-normalize the model first")
    p.add_argument("-k", type=int, default=None, help="results per query (default: all)")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("classify", parents=[shared], help="classify codes with lookup tables")
    p.add_argument("--model", required=True)
    p.add_argument("--codes", required=True)
    p.add_argument("--labels", help="labelled DPQV file; report Top-1/Top-5 instead of predictions")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", parents=[shared], help="mAP of a search result file")
    p.add_argument("--results", required=True)
    p.add_argument("--queries", required=True, help="labelled query DPQV file")
    p.add_argument("--database", required=True, help="labelled database DPQV file")
    p.add_argument("--mode-tag", default="search")
    p.add_argument("--bits", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", parents=[shared], help="run a configured end-to-end experiment")
    p.add_argument("config")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    if args.command != "experiment" and args.seed is None:
        args.seed = 0
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"dpq {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"dpq {args.command}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"dpq {args.command}: stage '{args.command}' failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
