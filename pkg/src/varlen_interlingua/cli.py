"""Command-line entry point ``vli``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bleu import corpus_bleu
from .checkpoint import load_checkpoint
from .corpus import CorpusConfig, Vocab, build_corpus, load_corpus
from .decoding import DecodeConfig, pivot_translate_batch, translate_batch
from .errors import DataError, NumericError, ShapeError
from .evaluation import (ExperimentConfig, evaluate_model, format_table,
                         length_predictor_report, run_experiment)
from .training import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _decode_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len", type=int, default=64, help="maximum generated tokens")
    p.add_argument("--length-penalty", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vli", description="Variable-length interlingua MNMT toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate the synthetic corpus")
    p.add_argument("config", help="corpus config JSON")
    p.add_argument("--out", default="corpus", help="output directory (default: ./corpus)")

    p = sub.add_parser("train", help="train one system")
    p.add_argument("config", help="train config JSON")

    p = sub.add_parser("translate", help="translate sentences from stdin or --input")
    p.add_argument("--model", required=True)
    p.add_argument("--src-lang", required=True)
    p.add_argument("--tgt-lang", required=True)
    p.add_argument("--input", help="file with one tokenised sentence per line (default stdin)")
    p.add_argument("--gold-length", action="store_true",
                   help="input lines are 'source<TAB>centric sentence'; the interlingua "
                        "length is forced to the centric sentence's length")
    p.add_argument("--pivot", action="store_true", help="translate through the centric language")
    _decode_args(p)

    p = sub.add_parser("evaluate", help="BLEU on every test direction")
    p.add_argument("--model", required=True)
    p.add_argument("--testset", required=True, help="corpus directory")
    p.add_argument("--split", default="test")
    p.add_argument("--pivot", action="store_true", help="also score pivot translation")
    p.add_argument("--report", help="write the report as JSON here")
    _decode_args(p)

    p = sub.add_parser("analyze-length", help="length predictor accuracy and gold-length BLEU")
    p.add_argument("--model", required=True)
    p.add_argument("--testset", help="corpus directory (default: the training corpus)")
    p.add_argument("--split", default="test")
    p.add_argument("--no-bleu", action="store_true", help="skip the gold vs predicted decode")
    _decode_args(p)

    p = sub.add_parser("compare", help="train and evaluate several systems over seeds")
    p.add_argument("config", help="experiment config JSON")
    return parser


def _decode_cfg(args) -> DecodeConfig:
    cfg = DecodeConfig(args.beam, args.max_len, args.length_penalty)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _model_and_vocab(path):
    model, _, meta = load_checkpoint(path)
    extra = meta.get("extra", {})
    if "vocab" in extra:
        return model, Vocab(extra["vocab"]), extra
    corpus_dir = extra.get("corpus_dir")
    if corpus_dir and (Path(corpus_dir) / "vocab.txt").exists():
        return model, Vocab.load(Path(corpus_dir) / "vocab.txt"), extra
    raise DataError(f"checkpoint {path} carries no vocabulary")


def cmd_gen_data(args) -> int:
    corpus = build_corpus(CorpusConfig.load(args.config), args.out)
    n = len(corpus.split_pairs("train"))
    print(f"wrote corpus to {corpus.root}: {n} training pairs, vocabulary {len(corpus.vocab)}")
    return EXIT_OK


def cmd_train(args) -> int:
    result = train(TrainConfig.load(args.config))
    print(f"best valid l_nmt {result.best_valid_l_nmt:.4f} at epoch {result.best_epoch}; "
          f"checkpoint {result.best_checkpoint}; {result.seconds:.0f}s")
    return EXIT_OK


def cmd_translate(args) -> int:
    if args.gold_length and args.pivot:
        raise UsageError("--gold-length and --pivot cannot be combined")
    model, vocab, _ = _model_and_vocab(args.model)
    for lang in (args.src_lang, args.tgt_lang):
        model.lang_index(lang)
    text = Path(args.input).read_text(encoding="utf-8") if args.input else sys.stdin.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    gold = None
    if args.gold_length:
        if model.config.mode != "variable":
            raise UsageError("--gold-length needs a variable-length model")
        parts = [ln.split("\t") for ln in lines]
        if any(len(p) != 2 for p in parts):
            raise DataError("--gold-length input lines must be 'source<TAB>centric sentence'")
        lines = [p[0] for p in parts]
        gold = [max(len(p[1].split()), 1) for p in parts]
    sources = [list(vocab.encode(ln.split())) for ln in lines]
    cfg = _decode_cfg(args)
    if args.pivot:
        out = pivot_translate_batch(model, sources, args.src_lang, args.tgt_lang, cfg)
    else:
        out = translate_batch(model, sources, args.src_lang, args.tgt_lang, cfg, gold)
    for t in out:
        print(" ".join(vocab.decode(t.tokens)))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, _, _ = _model_and_vocab(args.model)
    corpus = load_corpus(args.testset)
    report = evaluate_model(model, corpus, _decode_cfg(args), args.split, gold=True,
                            pivot=args.pivot)
    print(f"{'direction':<10}{'bleu':>9}{'gold':>9}{'pivot':>9}")
    for key, value in report.bleu.items():
        gold = report.gold_bleu.get(key)
        piv = report.pivot_bleu.get(key)
        cells = [f"{value:>9.2f}"] + [f"{'-':>9}" if v is None else f"{v:>9.2f}"
                                      for v in (gold, piv)]
        zs = " (zero-shot)" if key in report.zero_shot else ""
        print(f"{key:<10}" + "".join(cells) + zs)
    for name, value in report.summary().items():
        print(f"{name:<22}{value:>9.4f}")
    if report.truncated:
        print(f"{report.truncated} hypotheses hit the decode length limit")
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def cmd_analyze_length(args) -> int:
    model, _, extra = _model_and_vocab(args.model)
    if model.config.mode != "variable":
        raise UsageError("analyze-length needs a variable-length model")
    root = args.testset or extra.get("corpus_dir")
    if not root:
        raise UsageError("--testset is required for this checkpoint")
    corpus = load_corpus(root)
    directions = [d for d in corpus.supervised_directions() + corpus.zero_shot_directions()
                  if d[0] != corpus.config.centric]
    pairs = {d: corpus.pairs(args.split, *d) for d in directions}
    report = length_predictor_report(model, [p for ps in pairs.values() for p in ps])
    print(f"{'language':<10}{'accuracy':>10}{'mean|diff|':>12}{'count':>8}")
    for lang, v in report.per_language.items():
        print(f"{lang:<10}{100 * v['accuracy']:>9.1f}%{v['mean_abs_diff']:>12.3f}{v['count']:>8}")
    print(f"{'average':<10}{100 * report.accuracy:>9.1f}%{report.mean_abs_diff:>12.3f}")
    if not args.no_bleu:
        cfg = _decode_cfg(args)
        print(f"\n{'direction':<10}{'predicted':>11}{'gold':>9}")
        for (src, tgt), ps in pairs.items():
            srcs, refs = [p.src for p in ps], [p.tgt for p in ps]
            pred = translate_batch(model, srcs, src, tgt, cfg)
            gold = translate_batch(model, srcs, src, tgt, cfg, [p.centric_len for p in ps])
            print(f"{src}-{tgt:<7}{corpus_bleu([t.tokens for t in pred], refs):>11.2f}"
                  f"{corpus_bleu([t.tokens for t in gold], refs):>9.2f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    result = run_experiment(ExperimentConfig.load(args.config))
    print(format_table(result))
    print(f"\nreports in {result.out_dir} ({result.seconds:.0f}s)")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "translate": cmd_translate,
            "evaluate": cmd_evaluate, "analyze-length": cmd_analyze_length,
            "compare": cmd_compare}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"vli {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"vli {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, OSError) as exc:
        print(f"vli {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
