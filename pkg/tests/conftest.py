import numpy as np
import pytest

from varlen_interlingua import _kernels as K
from varlen_interlingua.corpus import CorpusConfig, GrammarConfig, build_corpus


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run a test once per kernel backend."""
    previous = K.get_backend()
    K.set_backend(request.param)
    yield request.param
    K.set_backend(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_corpus_config(**overrides) -> CorpusConfig:
    cfg = CorpusConfig(train_per_language=40, valid_per_language=8, test_per_language=8,
                       zero_shot_test=8, seed=7)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    return build_corpus(small_corpus_config(), tmp_path_factory.mktemp("corpus"))


@pytest.fixture(scope="session")
def short_grammar():
    return GrammarConfig(min_len=3, max_len=6)


def tiny_train_config(corpus, out, **overrides):
    from varlen_interlingua.training import TrainConfig
    kw = dict(mode="variable", d=8, heads=2, ff=16, dec_layers=1, epochs=1,
              batch_sentences=32, seed=3)
    kw.update(overrides)
    return TrainConfig(str(corpus.root), str(out), **kw)


@pytest.fixture(scope="session")
def tiny_runs(small_corpus, tmp_path_factory):
    """One quickly trained checkpoint per mode on the small corpus."""
    from varlen_interlingua.training import train
    root = tmp_path_factory.mktemp("runs")
    return {mode: train(tiny_train_config(small_corpus, root / mode, mode=mode))
            for mode in ("none", "variable")}


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
