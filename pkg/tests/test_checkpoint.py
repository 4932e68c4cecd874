import numpy as np
import pytest

from varlen_interlingua.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from varlen_interlingua.errors import DataError
from varlen_interlingua.model import init_model
from varlen_interlingua.optim import AdamState, adam_step
from varlen_interlingua.training import combined_loss, LossWeights

from gradcheck import random_batch, tiny_model_config


@pytest.mark.parametrize("mode", ["none", "fixed_universal", "fixed_language_specific",
                                  "variable"])
def test_round_trip_bitwise(tmp_path, mode):
    rng = np.random.default_rng(0)
    model = init_model(tiny_model_config(mode), seed=11)
    params = model.parameters()
    state = AdamState()
    adam_step(params, state, {k: rng.normal(size=p.shape) for k, p in params.items()})
    path = save_checkpoint(tmp_path / "m.ckpt", model, state, epoch=3, valid_l_nmt=1.25,
                           extra={"note": "x"})
    loaded, state2, meta = load_checkpoint(path)
    assert meta["epoch"] == 3 and meta["valid_l_nmt"] == 1.25 and meta["extra"] == {"note": "x"}
    assert state2.step == 1
    for k in params:
        assert np.array_equal(state.m[k], state2.m[k]) and np.array_equal(state.v[k], state2.v[k])
    batch = random_batch(np.random.default_rng(5), 3)
    a = combined_loss(batch, model, LossWeights())[1]
    b = combined_loss(batch, loaded, LossWeights())[1]
    assert a == b
    for k, p in loaded.parameters().items():
        assert p.data.tobytes() == params[k].data.tobytes()


def test_saving_twice_gives_identical_bytes(tmp_path):
    model = init_model(tiny_model_config("variable"), seed=1)
    a = save_checkpoint(tmp_path / "a.ckpt", model).read_bytes()
    b = save_checkpoint(tmp_path / "b.ckpt", model).read_bytes()
    assert a == b and a.startswith(MAGIC)


def test_without_optimizer_state(tmp_path):
    model = init_model(tiny_model_config("none"), seed=1)
    _, state, _ = load_checkpoint(save_checkpoint(tmp_path / "m.ckpt", model))
    assert state is None


def test_corrupt_files(tmp_path):
    model = init_model(tiny_model_config("none"), seed=1)
    good = save_checkpoint(tmp_path / "m.ckpt", model).read_bytes()
    (tmp_path / "magic").write_bytes(b"X" + good[1:])
    with pytest.raises(DataError, match="magic"):
        load_checkpoint(tmp_path / "magic")
    tampered = bytearray(good)
    tampered[20] ^= 0xFF  # inside the fingerprint
    (tmp_path / "fp").write_bytes(bytes(tampered))
    with pytest.raises(DataError, match="fingerprint"):
        load_checkpoint(tmp_path / "fp")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.ckpt")
