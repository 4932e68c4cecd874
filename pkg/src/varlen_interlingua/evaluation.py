"""Test-set evaluation, length-predictor diagnostics and multi-system experiments."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .bleu import corpus_bleu
from .checkpoint import load_checkpoint
from .corpus import Corpus, CorpusConfig, SentencePair, build_corpus, load_corpus
from .decoding import DecodeConfig, _encode, pivot_translate_batch, translate_batch
from .errors import DataError
from .interlingua import predict_length
from .model import Model
from .training import TrainConfig, train

log = logging.getLogger(__name__)

SYSTEM_MODES = {
    "mnmt": "none",
    "fixed_universal": "fixed_universal",
    "fixed_language_specific": "fixed_language_specific",
    "variable": "variable",
}


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values) if values else float("nan")


# ---------------------------------------------------------------------------
# length predictor
# ---------------------------------------------------------------------------


@dataclass
class LengthReport:
    per_language: dict[str, dict[str, float]]  # lang -> {accuracy, mean_abs_diff, count}

    @property
    def accuracy(self) -> float:
        return _mean(v["accuracy"] for v in self.per_language.values())

    @property
    def mean_abs_diff(self) -> float:
        return _mean(v["mean_abs_diff"] for v in self.per_language.values())

    def to_dict(self) -> dict:
        return {"per_language": self.per_language, "accuracy": self.accuracy,
                "mean_abs_diff": self.mean_abs_diff}


LengthOracle = Callable[[Sequence[SentencePair]], np.ndarray]


def length_predictor_report(model: Model, pairs: Sequence[SentencePair],
                            predictor: LengthOracle | None = None) -> LengthReport:
    """Exact-match accuracy and mean |predicted - gold| of ``len_I`` per source language.

    Only non-centric sources count (a centric source never consults the
    predictor). Gold is the pair's centric-side length. ``predictor`` replaces
    the trained classifier, which lets tests plug in oracle or constant
    predictors. Averages are unweighted means over languages.
    """
    if model.config.mode != "variable" and predictor is None:
        raise ValueError("length prediction exists only in variable mode")
    by_lang: dict[str, list[SentencePair]] = {}
    for p in pairs:
        if p.src_lang != model.config.centric:
            by_lang.setdefault(p.src_lang, []).append(p)
    out = {}
    for lang, group in sorted(by_lang.items()):
        # the same source sentence may occur in several directions; score it once
        seen: dict[tuple, int] = {}
        for p in group:
            seen.setdefault(tuple(p.src), p.centric_len)
        srcs = [list(s) for s in seen]
        gold = np.array(list(seen.values()))
        if predictor is not None:
            uniq = [SentencePair(tuple(s), (), lang, model.config.centric, g)
                    for s, g in zip(srcs, gold)]
            pred = np.asarray(predictor(uniq))
        else:
            h_s, _, ks = _encode(model, srcs, lang)
            pred = np.asarray(predict_length(h_s, ks, model.length_predictor))
        diff = np.abs(pred - gold)
        out[lang] = {"accuracy": float(np.mean(diff == 0)),
                     "mean_abs_diff": float(np.mean(diff)), "count": int(gold.size)}
    return LengthReport(out)


# ---------------------------------------------------------------------------
# per-model report
# ---------------------------------------------------------------------------


def _key(src: str, tgt: str) -> str:
    return f"{src}-{tgt}"


@dataclass
class EvaluationReport:
    centric: str
    bleu: dict[str, float] = field(default_factory=dict)  # direct decoding
    gold_bleu: dict[str, float] = field(default_factory=dict)  # len_I forced to gold
    pivot_bleu: dict[str, float] = field(default_factory=dict)
    zero_shot: list[str] = field(default_factory=list)
    length: LengthReport | None = None
    truncated: int = 0
    seconds: float = 0.0  # wall time spent producing this report (training included)

    def _avg(self, table: dict[str, float], keys) -> float:
        return _mean(table[k] for k in keys if k in table)

    @property
    def supervised(self) -> list[str]:
        return [k for k in self.bleu if k not in self.zero_shot]

    @property
    def zero_shot_avg(self) -> float:
        return self._avg(self.bleu, self.zero_shot)

    @property
    def supervised_avg(self) -> float:
        return self._avg(self.bleu, self.supervised)

    @property
    def from_centric_avg(self) -> float:
        return self._avg(self.bleu, [k for k in self.supervised
                                     if k.split("-")[0] == self.centric])

    @property
    def to_centric_avg(self) -> float:
        return self._avg(self.bleu, [k for k in self.supervised
                                     if k.split("-")[1] == self.centric])

    @property
    def pivot_avg(self) -> float:
        return self._avg(self.pivot_bleu, self.zero_shot)

    @property
    def gold_delta(self) -> dict[str, float]:
        return {k: self.gold_bleu[k] - self.bleu[k] for k in self.gold_bleu}

    def summary(self) -> dict[str, float]:
        row = {"zero_shot_avg": self.zero_shot_avg, "supervised_avg": self.supervised_avg,
               "from_centric_avg": self.from_centric_avg, "to_centric_avg": self.to_centric_avg}
        if self.pivot_bleu:
            row["pivot_avg"] = self.pivot_avg
        if self.gold_bleu:
            row["gold_zero_shot_avg"] = self._avg(self.gold_bleu, self.zero_shot)
        if self.length is not None:
            row["len_accuracy"] = self.length.accuracy
            row["len_mean_abs_diff"] = self.length.mean_abs_diff
        return row

    def to_dict(self) -> dict:
        return {"centric": self.centric, "bleu": self.bleu, "gold_bleu": self.gold_bleu,
                "pivot_bleu": self.pivot_bleu, "zero_shot": self.zero_shot,
                "length": None if self.length is None else self.length.to_dict(),
                "truncated": self.truncated, "seconds": self.seconds,
                "summary": self.summary()}

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationReport":
        length = data.get("length")
        return cls(data["centric"], data["bleu"], data.get("gold_bleu", {}),
                   data.get("pivot_bleu", {}), data.get("zero_shot", []),
                   None if length is None else LengthReport(length["per_language"]),
                   data.get("truncated", 0), data.get("seconds", 0.0))


def _write_hyps(path: Path | None, corpus: Corpus, hyps) -> None:
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(" ".join(corpus.vocab.decode(h.tokens)) + "\n" for h in hyps),
                    encoding="utf-8")


def evaluate_model(model: Model, corpus: Corpus, decode: DecodeConfig | None = None,
                   split: str = "test", gold: bool = True, pivot: bool = False,
                   out_dir: Path | None = None) -> EvaluationReport:
    """BLEU on every supervised and zero-shot direction of ``split``.

    In variable mode non-centric sources are also decoded with gold lengths,
    and the length predictor is scored. ``pivot`` adds two-hop decoding for
    zero-shot directions. Hypotheses go to ``out_dir`` when it is given.
    """
    decode = decode or DecodeConfig()
    centric = model.config.centric
    report = EvaluationReport(centric)
    directions = corpus.supervised_directions() + corpus.zero_shot_directions()
    report.zero_shot = [_key(a, b) for a, b in corpus.zero_shot_directions()]
    variable = model.config.mode == "variable"
    all_pairs = []
    for src, tgt in directions:
        pairs = corpus.pairs(split, src, tgt)
        if not pairs:
            raise DataError(f"no {split} pairs for {src}->{tgt}")
        all_pairs.extend(pairs)
        refs = [p.tgt for p in pairs]
        srcs = [p.src for p in pairs]
        key = _key(src, tgt)
        hyps = translate_batch(model, srcs, src, tgt, decode)
        report.truncated += sum(h.truncated for h in hyps)
        report.bleu[key] = corpus_bleu([h.tokens for h in hyps], refs)
        _write_hyps(out_dir and out_dir / f"direct.{key}.txt", corpus, hyps)
        if gold and variable and src != centric:
            g = translate_batch(model, srcs, src, tgt, decode, [p.centric_len for p in pairs])
            report.gold_bleu[key] = corpus_bleu([h.tokens for h in g], refs)
            _write_hyps(out_dir and out_dir / f"gold.{key}.txt", corpus, g)
        if pivot and key in report.zero_shot:
            pv = pivot_translate_batch(model, srcs, src, tgt, decode, allow_empty=True)
            report.pivot_bleu[key] = corpus_bleu([h.tokens for h in pv], refs)
            _write_hyps(out_dir and out_dir / f"pivot.{key}.txt", corpus, pv)
        log.info("%s %s bleu %.2f", split, key, report.bleu[key])
    if variable:
        report.length = length_predictor_report(model, all_pairs)
    return report


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    out_dir: str
    corpus_dir: str
    corpus_config: str | None = None  # built into corpus_dir when that is missing
    systems: list[str] = field(default_factory=lambda: list(SYSTEM_MODES))
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    train: dict = field(default_factory=dict)  # TrainConfig overrides
    train_enabled: bool = True
    reuse: bool = False  # skip runs whose report.json already exists
    beam: int = 5
    max_decode_len: int = 64
    pivot_systems: list[str] = field(default_factory=lambda: ["mnmt"])
    split: str = "test"

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read experiment config {path}: {exc}") from exc
        cfg = cls(**data)
        for name in ("out_dir", "corpus_dir", "corpus_config"):
            value = getattr(cfg, name)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, name, str((path.parent / value).resolve()))
        return cfg

    def validate(self) -> None:
        unknown = [s for s in self.systems if s not in SYSTEM_MODES]
        if unknown:
            raise DataError(f"unknown systems {unknown}; expected some of {list(SYSTEM_MODES)}")
        if not self.seeds:
            raise DataError("experiment needs at least one seed")


@dataclass
class ExperimentResult:
    reports: dict[tuple[str, int], EvaluationReport]
    out_dir: Path
    seconds: float = 0.0

    @property
    def run_seconds(self) -> float:
        """Training plus evaluation time summed over runs, as recorded in each report."""
        return sum(r.seconds for r in self.reports.values())

    def systems(self) -> list[str]:
        return list(dict.fromkeys(s for s, _ in self.reports))

    def for_system(self, system: str) -> list[EvaluationReport]:
        return [r for (s, _), r in self.reports.items() if s == system]

    def mean(self, system: str, metric: str) -> float:
        return _mean(r.summary()[metric] for r in self.for_system(system))

    def mean_direction(self, system: str, table: str, key: str) -> float:
        return _mean(getattr(r, table)[key] for r in self.for_system(system))


def _run_one(cfg: ExperimentConfig, corpus: Corpus, system: str, seed: int) -> EvaluationReport:
    run_dir = Path(cfg.out_dir) / system / f"seed{seed}"
    report_path = run_dir / "report.json"
    if cfg.reuse and report_path.exists():
        return EvaluationReport.from_dict(json.loads(report_path.read_text()))
    ckpt = run_dir / "best.ckpt"
    start = time.perf_counter()
    if cfg.train_enabled:
        tcfg = TrainConfig(corpus_dir=str(corpus.root), out_dir=str(run_dir),
                           mode=SYSTEM_MODES[system], seed=seed, **cfg.train)
        result = train(tcfg, corpus)
        log.info("%s seed %d trained in %.0fs (best epoch %d, valid l_nmt %.4f)",
                 system, seed, result.seconds, result.best_epoch, result.best_valid_l_nmt)
    elif not ckpt.exists():
        raise DataError(f"training disabled and no checkpoint at {ckpt}")
    model, _, _ = load_checkpoint(ckpt)
    report = evaluate_model(model, corpus, DecodeConfig(cfg.beam, cfg.max_decode_len),
                            cfg.split, gold=True, pivot=system in cfg.pivot_systems,
                            out_dir=run_dir / "translations")
    report.seconds = time.perf_counter() - start
    report_path.write_text(json.dumps(report.to_dict(), indent=2))
    return report


def _load_or_build_corpus(cfg: ExperimentConfig) -> Corpus:
    root = Path(cfg.corpus_dir)
    if (root / "corpus.json").exists():
        return load_corpus(root)
    if cfg.corpus_config is None:
        raise DataError(f"no corpus at {root} and no corpus_config to build one")
    return build_corpus(CorpusConfig.load(cfg.corpus_config), root)


SUMMARY_COLUMNS = ["zero_shot_avg", "supervised_avg", "from_centric_avg", "to_centric_avg",
                   "pivot_avg", "gold_zero_shot_avg", "len_accuracy", "len_mean_abs_diff"]


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Train (or load) every system for every seed, evaluate, and write CSV reports.

    Outputs in ``cfg.out_dir``: ``bleu.csv`` (one row per system, seed, kind
    and direction), ``summary.csv`` (per seed plus a ``mean`` row per
    system), ``length.csv`` and ``curves.csv`` (validation L_NMT per epoch
    for every run; per-step curves stay in each run's ``metrics.csv``).
    """
    cfg.validate()
    start = time.perf_counter()
    corpus = _load_or_build_corpus(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports: dict[tuple[str, int], EvaluationReport] = {}
    for system in cfg.systems:
        for seed in cfg.seeds:
            reports[(system, seed)] = _run_one(cfg, corpus, system, seed)
    result = ExperimentResult(reports, out, time.perf_counter() - start)
    _write_reports(result, cfg)
    return result


def _write_reports(result: ExperimentResult, cfg: ExperimentConfig) -> None:
    out = result.out_dir
    with open(out / "bleu.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["system", "seed", "kind", "direction", "zero_shot", "bleu"])
        for (system, seed), r in result.reports.items():
            for kind, table in (("direct", r.bleu), ("gold", r.gold_bleu), ("pivot", r.pivot_bleu)):
                for key, value in table.items():
                    w.writerow([system, seed, kind, key, int(key in r.zero_shot), f"{value:.4f}"])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["system", "seed"] + SUMMARY_COLUMNS)
        for system in result.systems():
            for (s, seed), r in result.reports.items():
                if s == system:
                    row = r.summary()
                    w.writerow([system, seed] + [_fmt(row.get(c)) for c in SUMMARY_COLUMNS])
            means = [_mean_or_none(result, system, c) for c in SUMMARY_COLUMNS]
            w.writerow([system, "mean"] + [_fmt(v) for v in means])
    with open(out / "length.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["system", "seed", "language", "accuracy", "mean_abs_diff", "count"])
        for (system, seed), r in result.reports.items():
            if r.length is not None:
                for lang, v in r.length.per_language.items():
                    w.writerow([system, seed, lang, f"{v['accuracy']:.4f}",
                                f"{v['mean_abs_diff']:.4f}", v["count"]])
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["system", "seed", "step", "epoch", "l_nmt"])
        for system, seed in result.reports:
            metrics = Path(cfg.out_dir) / system / f"seed{seed}" / "metrics.csv"
            if metrics.exists():
                with open(metrics, newline="") as mf:
                    for row in csv.DictReader(mf):
                        if row["split"] == "valid":
                            w.writerow([system, seed, row["step"], row["epoch"], row["l_nmt"]])


def _mean_or_none(result: ExperimentResult, system: str, metric: str):
    vals = [r.summary().get(metric) for r in result.for_system(system)]
    vals = [v for v in vals if v is not None]
    return _mean(vals) if vals else None


def _fmt(v) -> str:
    return "" if v is None else f"{v:.4f}"


def format_table(result: ExperimentResult) -> str:
    """Plain-text table: one line per system and seed plus a mean line."""
    cols = ["zero_shot_avg", "to_centric_avg", "from_centric_avg", "pivot_avg",
            "gold_zero_shot_avg", "len_accuracy", "len_mean_abs_diff"]
    heads = ["zero-shot", "to-ctr", "from-ctr", "pivot", "zs-gold", "len-acc", "len-mad"]
    lines = [f"{'system':<24}{'seed':>6}" + "".join(f"{h:>10}" for h in heads)]
    for system in result.systems():
        rows = [(str(seed), r.summary()) for (s, seed), r in result.reports.items() if s == system]
        mean_row = {c: _mean_or_none(result, system, c) for c in cols}
        for label, row in rows + [("mean", mean_row)]:
            cells = []
            for c in cols:
                v = row.get(c)
                cells.append(f"{'-':>10}" if v is None else f"{v:>10.2f}")
            lines.append(f"{system:<24}{label:>6}" + "".join(cells))
    return "\n".join(lines)
