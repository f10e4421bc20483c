"""Batch command line front end.

Verbs: syllabify, build-vocab, train, eval, tune, analyze, params.  Stdout
carries data (tables, metrics, segmentations); diagnostics go to stderr.
Relative data paths inside a config file resolve against the config file's
directory.  Exit codes: 0 success, 2 usage, 3 missing file, 4 malformed
config or pattern file, 5 vocabulary mismatch, 6 budget violation,
7 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from .analysis import (default_freq_bins, dump_records, eval_report,
                       pca_component_counts, ppl_by_frequency,
                       records_from_eval, shared_errors_table,
                       vocabulary_embeddings)
from .checkpoint import Checkpoint
from .config import TrainConfig, load_config
from .corpus import (build_vocabs, encode_corpus, load_vocabs, save_vocabs)
from .errors import (BudgetError, ConfigError, NonFiniteGradientError,
                     PatternParseError, VocabMismatchError)
from .lm import evaluate_stream, perplexity
from .syllabify import Segmenter, load_default_patterns, load_patterns, \
    load_segmentation_overrides
from .training import (ModelSizes, build_model, count_parameters,
                       model_from_checkpoint, random_search, train)

log = logging.getLogger("sublm")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_BAD_CONFIG = 4
EXIT_VOCAB_MISMATCH = 5
EXIT_BUDGET = 6
EXIT_DIVERGED = 7


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as f:
        return f.read()


def make_segmenter(mode: str, patterns_path: str = "", exceptions_path: str = "",
                   overrides_path: str = "") -> Segmenter:
    patterns = None
    overrides = None
    if mode in ("liang", "external"):
        if patterns_path:
            patterns = load_patterns(_read(patterns_path),
                                     _read(exceptions_path) if exceptions_path else "")
        else:
            patterns = load_default_patterns()
    if overrides_path:
        overrides, rejected = load_segmentation_overrides(_read(overrides_path))
        for lineno, reason in rejected:
            log.warning("%s line %d rejected: %s", overrides_path, lineno, reason)
    if mode == "external" and overrides is None:
        raise ConfigError("external mode needs --overrides (or the overrides config key)")
    return Segmenter(mode, patterns=patterns, overrides=overrides)


def _resolve_config_paths(config: TrainConfig, config_path: str) -> TrainConfig:
    base = os.path.dirname(os.path.abspath(config_path))
    updates = {}
    for key in ("patterns", "exceptions", "overrides", "train", "valid",
                "test", "vocab_dir"):
        value = getattr(config, key)
        if value and not os.path.isabs(value):
            updates[key] = os.path.join(base, value)
    return dataclasses.replace(config, **updates) if updates else config


def _segmenter_for(config: TrainConfig) -> Segmenter:
    return make_segmenter(config.mode, config.patterns, config.exceptions,
                          config.overrides)


def _vocabs_for(config: TrainConfig, segmenter: Segmenter):
    if config.vocab_dir:
        return load_vocabs(os.path.join(config.vocab_dir, "words.tsv"),
                           os.path.join(config.vocab_dir, "subwords.tsv"),
                           segmenter)
    if config.train:
        return build_vocabs(_read(config.train), segmenter,
                            word_cap=config.word_cap or None)
    raise ConfigError("config needs either vocab_dir or a train corpus")


def cmd_syllabify(args) -> int:
    seg = make_segmenter(args.mode, args.patterns, args.exceptions, args.overrides)
    for line in sys.stdin:
        tokens = line.split()
        print(" ".join("-".join(seg.segment(tok)) for tok in tokens))
    return EXIT_OK


def cmd_build_vocab(args) -> int:
    seg = make_segmenter(args.mode, args.patterns, args.exceptions, args.overrides)
    vocabs = build_vocabs(_read(args.corpus), seg, word_cap=args.word_cap)
    os.makedirs(args.out, exist_ok=True)
    save_vocabs(vocabs, os.path.join(args.out, "words.tsv"),
                os.path.join(args.out, "subwords.tsv"))
    print(f"words\t{vocabs.word_count}")
    print(f"subwords\t{vocabs.subword_count}")
    print(f"max_subwords\t{vocabs.n}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _resolve_config_paths(load_config(args.config), args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if not config.train:
        raise ConfigError("config key 'train' (training corpus path) is required")
    seg = _segmenter_for(config)
    vocabs = _vocabs_for(config, seg)
    texts = {"train": _read(config.train)}
    if config.valid:
        texts["valid"] = _read(config.valid)
    corpus = encode_corpus(texts, vocabs, seg)

    log_file = open(args.log, "w", encoding="utf-8") if args.log else None

    def log_line(line: str) -> None:
        print(line, flush=True)
        if log_file:
            log_file.write(line + "\n")

    try:
        ckpt = train(config, vocabs, corpus, log_line=log_line)
    finally:
        if log_file:
            log_file.close()
    ckpt.save(args.out)
    print(f"checkpoint\t{args.out}", file=sys.stderr)
    return EXIT_OK


def _load_model(checkpoint_path: str):
    """Checkpoint -> (model, config, vocabs, segmenter) with hash check."""
    ckpt = Checkpoint.load(checkpoint_path)
    config = TrainConfig.from_dict(ckpt.config)
    seg = _segmenter_for(config)
    vocabs = _vocabs_for(config, seg)
    ckpt.verify_vocabs(vocabs.hashes())
    model, _ = model_from_checkpoint(ckpt, ModelSizes.from_vocabs(vocabs))
    return model, config, vocabs, seg


def cmd_eval(args) -> int:
    model, config, vocabs, seg = _load_model(args.checkpoint)
    corpus = encode_corpus({"eval": _read(args.corpus)}, vocabs, seg)
    steps = args.steps or config.bptt
    ppl = perplexity(model, corpus.streams["eval"], corpus, steps=steps)
    print(f"ppl\t{ppl:.4f}")
    return EXIT_OK


def cmd_params(args) -> int:
    config = _resolve_config_paths(load_config(args.config), args.config)
    if config.vocab_size and config.subword_vocab_size:
        sizes = ModelSizes.from_config(config)
    else:
        seg = _segmenter_for(config)
        vocabs = _vocabs_for(config, seg)
        sizes = ModelSizes.from_vocabs(vocabs)
    count = count_parameters(build_model(config, sizes))
    print(f"params\t{count}")
    return EXIT_OK


def cmd_tune(args) -> int:
    config = _resolve_config_paths(load_config(args.config), args.config)
    if not config.train:
        raise ConfigError("config key 'train' (training corpus path) is required")
    seg = _segmenter_for(config)
    vocabs = _vocabs_for(config, seg)
    texts = {"train": _read(config.train)}
    if config.valid:
        texts["valid"] = _read(config.valid)
    corpus = encode_corpus(texts, vocabs, seg)
    ranked = random_search(config, budget=args.budget, trials=args.trials,
                           vocabs=vocabs, corpus=corpus, seed=args.seed,
                           tolerance=args.tolerance,
                           log_line=lambda s: print(s, file=sys.stderr))
    header = "rank\td_s\td_hw\td_lm\tparams\tval_ppl\tseed"
    lines = [header]
    for rank, trial in enumerate(ranked, start=1):
        lines.append(f"{rank}\t{trial.d_s}\t{trial.d_hw}\t{trial.d_lm}"
                     f"\t{trial.param_count}\t{trial.val_ppl:.4f}\t{trial.seed}")
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(table)
    return EXIT_OK


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_analyze(args) -> int:
    if not args.checkpoint:
        raise ConfigError("analyze needs at least one --checkpoint")
    os.makedirs(args.out, exist_ok=True)
    models = []
    vocab_hashes = None
    corpus = None
    steps = args.steps
    for path in args.checkpoint:
        model, config, vocabs, seg = _load_model(path)
        name = os.path.splitext(os.path.basename(path))[0]
        if vocab_hashes is None:
            vocab_hashes = vocabs.hashes()
            corpus = encode_corpus({"eval": _read(args.corpus)}, vocabs, seg)
            shared_vocabs = vocabs
            steps = steps or config.bptt
        elif vocabs.hashes() != vocab_hashes:
            raise VocabMismatchError(
                "checkpoints being compared use different vocabularies")
        models.append((name, model))

    stream = corpus.streams["eval"]
    all_records = {}
    for name, model in models:
        _, _, raw = evaluate_stream(model, stream, corpus, steps=steps,
                                    collect_records=True)
        records = records_from_eval(raw, shared_vocabs)
        all_records[name] = records
        with open(os.path.join(args.out, f"records_{name}.tsv"), "w",
                  encoding="utf-8") as f:
            f.write(dump_records(records))

    rows, text = eval_report(models, [("eval", stream)], corpus, steps=steps)
    with open(os.path.join(args.out, "report.tsv"), "w", encoding="utf-8") as f:
        f.write("model\tsplit\tppl\tparams\ttokens_per_sec\n")
        for row in rows:
            f.write("\t".join(str(v) for v in row) + "\n")
    print(text, end="")

    freq_bins = ([int(v) for v in args.freq_bins.split(",")] if args.freq_bins
                 else default_freq_bins(int(shared_vocabs.word_freq.max())))
    with open(os.path.join(args.out, "freq_ppl.tsv"), "w", encoding="utf-8") as f:
        f.write("model\tfreq_lo\tfreq_hi\tcount\tppl\n")
        for name, records in all_records.items():
            bins, _ = ppl_by_frequency(records, freq_bins)
            for lo, hi, count, ppl in bins:
                f.write(f"{name}\t{lo}\t{hi}\t{count}\t"
                        f"{'' if ppl is None else f'{ppl:.4f}'}\n")

    thresholds = _float_list(args.pca_thresholds)
    with open(os.path.join(args.out, "pca.tsv"), "w", encoding="utf-8") as f:
        f.write("model\t" + "\t".join(f"{t:g}" for t in thresholds) + "\n")
        for name, model in models:
            emb = vocabulary_embeddings(model, corpus)
            counts = pca_component_counts(emb, thresholds)
            f.write(name + "\t" + "\t".join(str(c) for c in counts) + "\n")

    if len(models) == 2:
        grid = _float_list(args.p_star_grid)
        (name_a, _), (name_b, _) = models
        table = shared_errors_table(all_records[name_a], all_records[name_b], grid)
        with open(os.path.join(args.out, "shared_errors.tsv"), "w",
                  encoding="utf-8") as f:
            f.write("p_star\terr_%s\terr_%s\tfrac_shared\n" % (name_a, name_b))
            for p_star, err_a, err_b, frac in table:
                f.write(f"{p_star:g}\t{err_a:.6f}\t{err_b:.6f}\t{frac:.6f}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sublm",
        description="Subword-aware neural language modeling toolkit.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_segmentation_flags(p):
        p.add_argument("--mode", choices=["liang", "chars", "external"],
                       default="liang")
        p.add_argument("--patterns", default="", help="TeX-style pattern file "
                       "(default: bundled English patterns)")
        p.add_argument("--exceptions", default="", help="hyphenation exceptions file")
        p.add_argument("--overrides", default="", help="word<TAB>parts segmentation file")

    p = sub.add_parser("syllabify", help="segment words from stdin to stdout")
    add_segmentation_flags(p)
    p.set_defaults(func=cmd_syllabify)

    p = sub.add_parser("build-vocab", help="build word and subword vocabularies")
    p.add_argument("--corpus", required=True)
    p.add_argument("--word-cap", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    add_segmentation_flags(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default="", help="also write epoch lines here")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="perplexity of a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--steps", type=int, default=0, help="evaluation window")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("params", help="parameter count of a config, no training")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("tune", help="random hyperparameter search under a budget")
    p.add_argument("--config", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="", help="also write the ranked table here")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("analyze", help="model-comparison reports")
    p.add_argument("--checkpoint", action="append", default=[],
                   help="repeat for pairwise comparisons")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--steps", type=int, default=0)
    p.add_argument("--p-star-grid", default="0.001,0.01,0.05,0.1,0.2,0.5")
    p.add_argument("--freq-bins", default="", help="comma-separated bin edges")
    p.add_argument("--pca-thresholds", default="0.8,0.9,0.95,0.99")
    p.set_defaults(func=cmd_analyze)
    return parser


def run(argv) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"error: missing file: {err.filename or err}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (ConfigError, PatternParseError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_BUDGET if isinstance(err, BudgetError) else EXIT_BAD_CONFIG
    except VocabMismatchError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VOCAB_MISMATCH
    except NonFiniteGradientError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIVERGED


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
