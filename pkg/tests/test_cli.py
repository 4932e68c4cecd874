import json

import pytest

from varlen_interlingua.cli import main
from varlen_interlingua.corpus import CorpusConfig

from conftest import small_corpus_config


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_usage_errors(capsys):
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys)[0] == 1
    assert run(capsys, "translate", "--model", "x")[0] == 1


def test_data_errors(capsys, tmp_path):
    assert run(capsys, "train", str(tmp_path / "missing.json"))[0] == 2
    assert run(capsys, "evaluate", "--model", str(tmp_path / "none.ckpt"),
               "--testset", str(tmp_path))[0] == 2
    (tmp_path / "bad.json").write_text("{not json")
    code, _, err = run(capsys, "gen-data", str(tmp_path / "bad.json"))
    assert code == 2 and "data error" in err


def test_gen_data(capsys, tmp_path):
    cfg = small_corpus_config()
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    code, out, _ = run(capsys, "gen-data", str(tmp_path / "c.json"), "--out", str(tmp_path / "c"))
    assert code == 0 and "240 training pairs" in out
    assert CorpusConfig.load(tmp_path / "c" / "corpus.json") == cfg


def test_numeric_failure_exit_code(capsys, tmp_path, small_corpus, monkeypatch):
    import varlen_interlingua.training as tr
    from varlen_interlingua.errors import NumericError

    def explode(*a, **k):
        raise NumericError("loss became nan")

    monkeypatch.setattr(tr, "combined_loss", explode)
    cfg = {"corpus_dir": str(small_corpus.root), "out_dir": str(tmp_path / "run"), "d": 8,
           "heads": 2, "ff": 16, "dec_layers": 1, "epochs": 1}
    (tmp_path / "t.json").write_text(json.dumps(cfg))
    assert run(capsys, "train", str(tmp_path / "t.json"))[0] == 3


def test_train_config_relative_paths(capsys, tmp_path, small_corpus):
    cfg = {"corpus_dir": str(small_corpus.root), "out_dir": "run", "mode": "none", "d": 8,
           "heads": 2, "ff": 16, "dec_layers": 1, "epochs": 1, "max_train_pairs": 30}
    (tmp_path / "t.json").write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "train", str(tmp_path / "t.json"))
    assert code == 0 and "best valid l_nmt" in out
    assert (tmp_path / "run" / "best.ckpt").exists()


@pytest.fixture
def ckpt(tiny_runs):
    return str(tiny_runs["variable"].best_checkpoint)


def test_translate(capsys, tmp_path, ckpt, small_corpus):
    pairs = small_corpus.pairs("test", "it", "en")[:3]
    vocab = small_corpus.vocab
    src = "\n".join(" ".join(vocab.decode(p.src)) for p in pairs)
    (tmp_path / "in.txt").write_text(src + "\n")
    code, out, _ = run(capsys, "translate", "--model", ckpt, "--src-lang", "it", "--tgt-lang",
                       "en", "--input", str(tmp_path / "in.txt"), "--beam", "2", "--max-len", "6")
    assert code == 0 and len(out.splitlines()) == 3

    gold = "\n".join(" ".join(vocab.decode(p.src)) + "\t" + " ".join(vocab.decode(p.tgt))
                     for p in pairs)
    (tmp_path / "gold.txt").write_text(gold + "\n")
    code, out, _ = run(capsys, "translate", "--model", ckpt, "--src-lang", "it", "--tgt-lang",
                       "nl", "--input", str(tmp_path / "gold.txt"), "--gold-length",
                       "--beam", "2", "--max-len", "6")
    assert code == 0 and len(out.splitlines()) == 3

    assert run(capsys, "translate", "--model", ckpt, "--src-lang", "it", "--tgt-lang", "nl",
               "--input", str(tmp_path / "in.txt"), "--gold-length")[0] == 2
    assert run(capsys, "translate", "--model", ckpt, "--src-lang", "it", "--tgt-lang", "nl",
               "--input", str(tmp_path / "in.txt"), "--gold-length", "--pivot")[0] == 1
    assert run(capsys, "translate", "--model", ckpt, "--src-lang", "xx", "--tgt-lang", "nl",
               "--input", str(tmp_path / "in.txt"))[0] == 2
    assert run(capsys, "translate", "--model", ckpt, "--src-lang", "it", "--tgt-lang", "nl",
               "--input", str(tmp_path / "in.txt"), "--beam", "0")[0] == 1
    (tmp_path / "unk.txt").write_text("zzz\n")
    assert run(capsys, "translate", "--model", ckpt, "--src-lang", "it", "--tgt-lang", "nl",
               "--input", str(tmp_path / "unk.txt"))[0] == 2


def test_evaluate_and_analyze(capsys, tmp_path, ckpt, small_corpus):
    code, out, _ = run(capsys, "evaluate", "--model", ckpt, "--testset", str(small_corpus.root),
                       "--beam", "1", "--max-len", "6", "--report", str(tmp_path / "r.json"))
    assert code == 0 and "zero_shot_avg" in out and "(zero-shot)" in out
    assert json.loads((tmp_path / "r.json").read_text())["zero_shot"]
    code, out, _ = run(capsys, "analyze-length", "--model", ckpt, "--beam", "1", "--max-len", "6")
    assert code == 0 and "average" in out and "predicted" in out


def test_analyze_length_rejects_mnmt(capsys, tiny_runs):
    assert run(capsys, "analyze-length", "--model",
               str(tiny_runs["none"].best_checkpoint), "--no-bleu")[0] == 1


def test_compare(capsys, tmp_path, small_corpus):
    cfg = {"out_dir": "exp", "corpus_dir": str(small_corpus.root), "systems": ["variable"],
           "seeds": [1], "beam": 1, "max_decode_len": 5,
           "train": {"d": 8, "heads": 2, "ff": 16, "dec_layers": 1, "epochs": 1,
                     "max_train_pairs": 40}}
    (tmp_path / "e.json").write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "compare", str(tmp_path / "e.json"))
    assert code == 0 and "variable" in out and "mean" in out
    assert (tmp_path / "exp" / "summary.csv").exists()
