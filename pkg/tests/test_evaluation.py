import csv
import json
from collections import Counter

import numpy as np
import pytest

from varlen_interlingua.checkpoint import load_checkpoint
from varlen_interlingua.decoding import DecodeConfig
from varlen_interlingua.errors import DataError
from varlen_interlingua.evaluation import (EvaluationReport, ExperimentConfig,
                                           evaluate_model, format_table,
                                           length_predictor_report, run_experiment)

FAST = DecodeConfig(beam=2, max_len=8)


@pytest.fixture(scope="module")
def variable_model(tiny_runs):
    return load_checkpoint(tiny_runs["variable"].best_checkpoint)[0]


@pytest.fixture(scope="module")
def test_pairs(small_corpus):
    c = small_corpus
    dirs = c.supervised_directions() + c.zero_shot_directions()
    return [p for d in dirs for p in c.pairs("test", *d)]


def test_oracle_predictor_is_perfect(variable_model, test_pairs):
    rep = length_predictor_report(variable_model, test_pairs,
                                  lambda ps: np.array([p.centric_len for p in ps]))
    assert rep.accuracy == 1.0 and rep.mean_abs_diff == 0.0
    assert set(rep.per_language) == {"it", "nl", "ro"}


def test_constant_predictor_counts(variable_model, test_pairs):
    rep = length_predictor_report(variable_model, test_pairs, lambda ps: np.full(len(ps), 7))
    for lang, v in rep.per_language.items():
        gold = {p.src: p.centric_len for p in test_pairs if p.src_lang == lang}
        counts = Counter(gold.values())
        assert v["count"] == len(gold)
        assert v["accuracy"] == pytest.approx(counts[7] / len(gold), abs=1e-15)
        assert v["mean_abs_diff"] == pytest.approx(
            np.mean([abs(g - 7) for g in gold.values()]), abs=1e-12)
    assert rep.accuracy == pytest.approx(np.mean([v["accuracy"]
                                                  for v in rep.per_language.values()]))


def test_trained_predictor_report_in_range(variable_model, test_pairs):
    rep = length_predictor_report(variable_model, test_pairs)
    assert 0.0 <= rep.accuracy <= 1.0 and rep.mean_abs_diff >= 0.0


def test_report_needs_variable_mode(tiny_runs, test_pairs):
    model = load_checkpoint(tiny_runs["none"].best_checkpoint)[0]
    with pytest.raises(ValueError):
        length_predictor_report(model, test_pairs)


def test_averages_recompute():
    rep = EvaluationReport("en", bleu={"en-it": 10.0, "it-en": 20.0, "en-nl": 30.0,
                                       "nl-en": 41.0, "it-nl": 3.0, "nl-it": 4.5},
                           pivot_bleu={"it-nl": 7.0, "nl-it": 8.0},
                           zero_shot=["it-nl", "nl-it"])
    assert rep.supervised_avg == pytest.approx((10 + 20 + 30 + 41) / 4, abs=1e-12)
    assert rep.zero_shot_avg == pytest.approx(3.75, abs=1e-12)
    assert rep.from_centric_avg == pytest.approx(20.0, abs=1e-12)
    assert rep.to_centric_avg == pytest.approx(30.5, abs=1e-12)
    assert rep.pivot_avg == pytest.approx(7.5, abs=1e-12)
    again = EvaluationReport.from_dict(json.loads(json.dumps(rep.to_dict())))
    assert again.summary() == rep.summary()


def test_evaluate_variable_model(variable_model, small_corpus, tmp_path):
    rep = evaluate_model(variable_model, small_corpus, FAST, pivot=True, out_dir=tmp_path)
    assert len(rep.bleu) == 12 and len(rep.zero_shot) == 6
    # gold decoding only for non-centric sources
    assert set(rep.gold_bleu) == {k for k in rep.bleu if not k.startswith("en-")}
    assert set(rep.pivot_bleu) == set(rep.zero_shot)
    assert rep.length is not None
    assert all(0 <= v <= 100 for v in rep.bleu.values())
    lines = (tmp_path / "direct.it-nl.txt").read_text().splitlines()
    assert len(lines) == len(small_corpus.pairs("test", "it", "nl"))


def test_evaluate_mnmt_has_no_length_section(tiny_runs, small_corpus):
    model = load_checkpoint(tiny_runs["none"].best_checkpoint)[0]
    rep = evaluate_model(model, small_corpus, FAST)
    assert rep.length is None and rep.gold_bleu == {}
    assert "len_accuracy" not in rep.summary()


def test_experiment_two_seeds(small_corpus, tmp_path):
    cfg = ExperimentConfig(out_dir=str(tmp_path / "exp"), corpus_dir=str(small_corpus.root),
                           systems=["mnmt"], seeds=[1, 2], beam=1, max_decode_len=6,
                           train=dict(d=8, heads=2, ff=16, dec_layers=1, epochs=1,
                                      batch_sentences=64))
    result = run_experiment(cfg)
    assert result.systems() == ["mnmt"] and len(result.reports) == 2
    rows = list(csv.DictReader(open(tmp_path / "exp" / "summary.csv")))
    assert [r["seed"] for r in rows] == ["1", "2", "mean"]
    zs = [float(r["zero_shot_avg"]) for r in rows]
    assert zs[2] == pytest.approx((zs[0] + zs[1]) / 2, abs=1e-4)
    assert all(r["len_accuracy"] == "" for r in rows)
    curves = list(csv.DictReader(open(tmp_path / "exp" / "curves.csv")))
    assert len(curves) == 2
    assert "mean" in format_table(result)
    # reuse picks the stored reports up without retraining
    cfg.reuse, cfg.train_enabled = True, False
    again = run_experiment(cfg)
    assert again.mean("mnmt", "zero_shot_avg") == result.mean("mnmt", "zero_shot_avg")


def test_experiment_missing_checkpoint(small_corpus, tmp_path):
    cfg = ExperimentConfig(out_dir=str(tmp_path), corpus_dir=str(small_corpus.root),
                           systems=["variable"], seeds=[1], train_enabled=False)
    with pytest.raises(DataError, match="no checkpoint"):
        run_experiment(cfg)


def test_experiment_config_validation(tmp_path):
    with pytest.raises(DataError):
        ExperimentConfig(str(tmp_path), str(tmp_path), systems=["bogus"]).validate()
    with pytest.raises(DataError):
        ExperimentConfig(str(tmp_path), str(tmp_path), seeds=[]).validate()
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"out_dir": "out", "corpus_dir": "c"}))
    cfg = ExperimentConfig.load(path)
    assert cfg.out_dir == str((tmp_path / "out").resolve())
