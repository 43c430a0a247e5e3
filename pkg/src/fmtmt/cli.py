"""Command-line entry point wiring all pipeline stages.

Verbs: extract-lexicon, annotate, train, search, translate, eval-metric,
eval-masked, serve. A JSON config file may supply defaults for any flag;
explicit flags win. All randomness flows from one --seed value, from which
each stage derives its own seed, so identical inputs and seed produce
byte-identical artifacts.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import zlib
from pathlib import Path

from . import annotator, corpus_io, hyperopt, lexicon, metric, mlm_eval, model, synth, textnorm
from .labels import FormalityLabel

WORKDIR_ENV = "FMT_MT_WORKDIR"


class CommandError(Exception):
    """A user-facing failure with a machine-parseable category."""

    def __init__(self, category: str, detail: str):
        super().__init__(detail)
        self.category = category


def derive_seed(seed: int, stage: str) -> int:
    """Per-stage seed derived from the global one; stable across runs and
    platforms."""
    return zlib.crc32(f"{stage}:{seed}".encode("utf-8")) & 0x7FFFFFFF


def _work_dir(args) -> Path:
    if args.work_dir:
        return Path(args.work_dir)
    env = os.environ.get(WORKDIR_ENV)
    return Path(env) if env else Path.cwd()


def _out_path(args, flag_value: str, default_name: str) -> Path:
    if flag_value:
        return Path(flag_value)
    directory = _work_dir(args)
    directory.mkdir(parents=True, exist_ok=True)
    return directory / default_name


def _require_file(path: str | Path, category: str = "missing-file") -> Path:
    path = Path(path)
    if not path.is_file():
        raise CommandError(category, f"no such file: {path}")
    return path


def _write_json(payload, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=False, indent=2, sort_keys=True)
        handle.write("\n")


def _norm_cfg(args) -> textnorm.NormalizationConfig:
    return textnorm.NormalizationConfig(max_tokens=args.max_tokens)


# --------------------------- commands ---------------------------


def cmd_extract_lexicon(args) -> int:
    records = corpus_io.read_contrastive(_require_file(args.contrastive))
    lex = lexicon.extract_lexicon(records, _norm_cfg(args))
    lexicon_path = _out_path(args, args.out, "lexicon.json")
    corpus_io.write_lexicon(lex, lexicon_path)
    report = lexicon.lexicon_report(lex)
    report["conflicts"] = sorted(lex.conflicts)
    report_path = _out_path(args, args.report, "lexicon_report.json")
    _write_json(report, report_path)
    print(f"lexicon: {lexicon_path}")
    for key in ("formal_count", "informal_count", "conflict_count"):
        print(f"{key:>16}: {report[key]}")
    return 0


def cmd_annotate(args) -> int:
    lex = corpus_io.read_lexicon(_require_file(args.lexicon))
    pairs = corpus_io.read_parallel(_require_file(args.parallel))
    stream, report = annotator.annotate_corpus(pairs, lex, _norm_cfg(args))
    out_path = _out_path(args, args.out, "annotated.tsv")
    rows = (
        corpus_io.AnnotatedRecord(r.source_text, r.target_tagged, r.label) for r in stream
    )
    corpus_io.write_annotated(rows, out_path)
    report_path = _out_path(args, args.report, "annotation_report.json")
    _write_json(report.as_dict(), report_path)
    print(f"annotated corpus: {out_path}")
    for label, count in report.as_dict().items():
        print(f"{label:>10}: {count}")
    return 0


def _load_labeled_pairs(path: Path) -> list[model.LabeledPair]:
    pairs = []
    for row in corpus_io.read_annotated(path):
        plain = lexicon.parse_annotated(row.target_tagged).plain_text
        pairs.append(model.LabeledPair(row.source_text, plain, row.label))
    if not pairs:
        raise CommandError("empty-input", f"annotated corpus {path} is empty")
    return pairs


def cmd_train(args) -> int:
    pairs = _load_labeled_pairs(_require_file(args.annotated))
    norm_cfg = _norm_cfg(args)
    split_cfg = corpus_io.SplitConfig(
        validation_fraction=args.val_fraction, seed=derive_seed(args.seed, "split")
    )
    train_pairs, val_pairs = corpus_io.split(pairs, split_cfg)
    if not val_pairs:
        raise CommandError("config-invalid", "validation split is empty; corpus too small")
    src_vocab = model.build_vocab(
        [textnorm.tokenize(p.source, norm_cfg) for p in train_pairs], args.min_freq
    )
    tgt_vocab = model.build_vocab(
        [textnorm.tokenize(p.target, norm_cfg) for p in train_pairs], args.min_freq
    )
    cfg = model.ModelConfig(
        embed_dim=args.embed_dim,
        latent_dim=args.latent_dim,
        num_heads=args.num_heads,
        src_vocab_size=src_vocab.size,
        tgt_vocab_size=tgt_vocab.size,
        seq_len=args.seq_len,
        depth=args.depth,
        use_control=not args.no_control,
    )
    train_cfg = model.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        optimizer=args.optimizer,
        learning_rate=args.lr,
        seed=derive_seed(args.seed, "train"),
        warmup_steps=args.warmup_steps,
    )
    try:
        params, history = model.train(
            train_pairs, val_pairs, src_vocab, tgt_vocab, cfg, train_cfg, norm_cfg
        )
    except model.DivergenceError as err:
        raise CommandError("divergence", str(err)) from err
    bundle = model.ModelBundle(cfg, params, src_vocab, tgt_vocab)
    ckpt_path = _out_path(args, args.checkpoint, "model.ckpt")
    checksum = model.save_checkpoint(bundle, ckpt_path)
    history_path = _out_path(args, args.history, "history.csv")
    history_path.write_text("\n".join(history.csv_rows()) + "\n", encoding="utf-8")
    print(f"checkpoint: {ckpt_path} ({checksum})")
    print(f"history: {history_path}")
    print(
        f"final train loss {history.final_loss():.4f}, "
        f"validation accuracy {history.final_accuracy():.4f}"
    )
    return 0


def cmd_search(args) -> int:
    pairs = _load_labeled_pairs(_require_file(args.annotated))
    split_cfg = corpus_io.SplitConfig(
        validation_fraction=args.val_fraction, seed=derive_seed(args.seed, "split")
    )
    train_pairs, val_pairs = corpus_io.split(pairs, split_cfg)
    space = hyperopt.SearchSpace(
        trial_budget=args.trials,
        epochs_per_trial=args.epochs_per_trial,
        seed=derive_seed(args.seed, "search"),
    )
    try:
        result = hyperopt.search(space, train_pairs, val_pairs, learning_rate=args.lr)
    except hyperopt.AllTrialsDivergedError as err:
        raise CommandError("all-trials-diverged", str(err)) from err
    log_path = _out_path(args, args.trial_log, "trials.jsonl")
    hyperopt.write_trial_log(result, log_path)
    best_path = _out_path(args, args.best_config, "best_config.json")
    _write_json(
        {"config": result.best_config.to_dict(), "accuracy": result.best_accuracy},
        best_path,
    )
    print(f"trial log: {log_path}")
    print(f"best config: {best_path} (accuracy {result.best_accuracy:.4f})")
    return 0


def _load_bundle(args) -> model.ModelBundle:
    path = Path(args.checkpoint) if args.checkpoint else _work_dir(args) / "model.ckpt"
    if not path.is_file():
        raise CommandError("no-checkpoint", f"no checkpoint at {path}")
    try:
        return model.load_checkpoint(path)
    except model.CheckpointVersionError as err:
        raise CommandError("version-mismatch", str(err)) from err
    except model.CheckpointError as err:
        raise CommandError("corrupt-checkpoint", str(err)) from err


def cmd_translate(args) -> int:
    bundle = _load_bundle(args)
    decode_cfg = model.DecodeConfig(
        max_length=args.max_length,
        num_beams=args.beams,
        early_stopping=not args.no_early_stopping,
    )
    hypothesis = model.decode(
        bundle, args.text, FormalityLabel.from_string(args.formality), decode_cfg
    )
    print(hypothesis)
    return 0


def cmd_eval_metric(args) -> int:
    records = corpus_io.read_contrastive(_require_file(args.contrastive))
    with open(_require_file(args.hypotheses), "r", encoding="utf-8") as handle:
        hypotheses = [line.rstrip("\n") for line in handle]
    try:
        entries = metric.build_eval_set(records, hypotheses)
        result = metric.matched_accuracy(entries, mode=args.mode)
    except (ValueError, metric.EmptyEvalSetError) as err:
        raise CommandError("eval-mismatch", str(err)) from err
    print(json.dumps(result.as_dict(), ensure_ascii=False, sort_keys=True))
    return 0


def cmd_eval_masked(args) -> int:
    bundle = _load_bundle(args)
    rows = list(corpus_io.read_annotated(_require_file(args.annotated)))
    mask_cfg = mlm_eval.MaskConfig(
        mask_probability=args.mask_probability,
        seed=derive_seed(args.seed, "mask"),
    )
    report = mlm_eval.evaluate_corpus(rows, bundle, mask_cfg)
    if not args.verbose:
        report = {k: v for k, v in report.items() if k != "details"}
    print(json.dumps(report, ensure_ascii=False, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    bundle = _load_bundle(args)
    lex = corpus_io.read_lexicon(_require_file(args.lexicon)) if args.lexicon else None
    app = create_app(
        bundle, lex, cors_origins=args.cors_origin or None
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_make_fixture(args) -> int:
    paths = synth.write_fixture(
        _work_dir(args) if not args.out else Path(args.out),
        n_contrastive=args.contrastive_size,
        n_parallel=args.parallel_size,
        seed=derive_seed(args.seed, "fixture"),
    )
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


# --------------------------- wiring ---------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file with flag defaults")
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--work-dir", help=f"output directory (or ${WORKDIR_ENV})")
    parser.add_argument(
        "--max-tokens", type=int, default=100, help="token truncation length"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fmtmt",
        description="Formality-controlled machine translation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-lexicon", help="build the formal/informal lexicon")
    _add_common(p)
    p.add_argument("--contrastive", required=True, help="contrastive reference TSV")
    p.add_argument("--out", help="lexicon JSON path")
    p.add_argument("--report", help="report JSON path")
    p.set_defaults(func=cmd_extract_lexicon)

    p = sub.add_parser("annotate", help="label a parallel corpus with the lexicon")
    _add_common(p)
    p.add_argument("--parallel", required=True, help="parallel corpus TSV")
    p.add_argument("--lexicon", required=True, help="lexicon JSON")
    p.add_argument("--out", help="annotated TSV path")
    p.add_argument("--report", help="distribution report JSON path")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("train", help="train the tag-controlled transformer")
    _add_common(p)
    p.add_argument("--annotated", required=True, help="annotated corpus TSV")
    p.add_argument("--checkpoint", help="checkpoint output path")
    p.add_argument("--history", help="history CSV output path")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--optimizer", choices=["rmsprop", "adam_warmup"], default="rmsprop")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup-steps", type=int, default=0)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--latent-dim", type=int, default=128)
    p.add_argument("--num-heads", type=int, default=2)
    p.add_argument("--seq-len", type=int, default=100)
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument(
        "--no-control", action="store_true", help="train without control tokens"
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("search", help="random hyperparameter search")
    _add_common(p)
    p.add_argument("--annotated", required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--epochs-per-trial", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--trial-log", help="JSON-lines trial log path")
    p.add_argument("--best-config", help="best config JSON path")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("translate", help="translate one sentence")
    _add_common(p)
    p.add_argument("--checkpoint", help="trained checkpoint")
    p.add_argument("--text", required=True)
    p.add_argument(
        "--formality", choices=["formal", "informal", "neutral"], default="neutral"
    )
    p.add_argument("--beams", type=int, default=1)
    p.add_argument("--max-length", type=int, default=100)
    p.add_argument("--no-early-stopping", action="store_true")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("eval-metric", help="matched-accuracy over hypotheses")
    _add_common(p)
    p.add_argument("--contrastive", required=True)
    p.add_argument("--hypotheses", required=True, help="one hypothesis per line")
    p.add_argument("--mode", choices=["all", "any"], default="all")
    p.set_defaults(func=cmd_eval_metric)

    p = sub.add_parser("eval-masked", help="masked-token accuracy and loss")
    _add_common(p)
    p.add_argument("--annotated", required=True)
    p.add_argument("--checkpoint", help="trained checkpoint")
    p.add_argument("--mask-probability", type=float, default=0.15)
    p.add_argument("--verbose", action="store_true", help="include per-sentence details")
    p.set_defaults(func=cmd_eval_masked)

    p = sub.add_parser("serve", help="run the HTTP translation service")
    _add_common(p)
    p.add_argument("--checkpoint", help="trained checkpoint")
    p.add_argument("--lexicon", help="lexicon JSON for output span marking")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument(
        "--cors-origin", action="append", help="allowed browser origin (repeatable)"
    )
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("make-fixture", help="generate the synthetic demo corpus")
    _add_common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--contrastive-size", type=int, default=50)
    p.add_argument("--parallel-size", type=int, default=200)
    p.set_defaults(func=cmd_make_fixture)

    return parser


def _apply_config_defaults(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse twice: once to find --config, then with the file's values as
    defaults so explicit flags win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    config_path = _require_file(args.config, "missing-file")
    try:
        with open(config_path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except json.JSONDecodeError as err:
        raise CommandError("config-invalid", f"{config_path}: {err}") from err
    if not isinstance(payload, dict):
        raise CommandError("config-invalid", f"{config_path}: expected a JSON object")
    overrides = {}
    for key, value in payload.items():
        dest = key.replace("-", "_")
        if hasattr(args, dest):
            overrides[dest] = value
    sub_argv = list(argv)
    explicit = {a.split("=")[0] for a in sub_argv if a.startswith("--")}
    for dest, value in overrides.items():
        flag = "--" + dest.replace("_", "-")
        if flag in explicit:
            continue
        setattr(args, dest, value)
    return args


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config_defaults(parser, argv)
        return args.func(args)
    except CommandError as err:
        print(f"error: {err.category}: {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"error: missing-file: {err}", file=sys.stderr)
        return 1
    except corpus_io.CorpusFormatError as err:
        print(f"error: {err.reason}: {err}", file=sys.stderr)
        return 1
    except lexicon.TagError as err:
        print(f"error: tag-parse-error: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"error: config-invalid: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
