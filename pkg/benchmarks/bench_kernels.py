"""Compare the numba and pure-numpy kernel paths.

Times each hot kernel on training-sized inputs, then one full training step
(forward, backward, Adam) of the default variable-length model on a random
batch. Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import time

import numpy as np

from varlen_interlingua import _kernels as K
from varlen_interlingua import tensor as T
from varlen_interlingua.corpus import SentencePair, Vocab, make_batch
from varlen_interlingua.interlingua import InterlinguaConfig
from varlen_interlingua.model import ModelConfig, init_model
from varlen_interlingua.optim import AdamState, adam_step
from varlen_interlingua.training import LossWeights, combined_loss


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compilation)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(rng):
    rows, width, d, vocab = 64 * 4 * 11, 11, 64, 221
    scores = rng.normal(size=(rows, width))
    mask = rng.random((rows, width)) > 0.2
    mask[:, 0] = True
    probs = K.softmax_rows(scores, mask)
    gy = rng.normal(size=scores.shape)
    x = rng.normal(size=(64 * 11, d))
    gain, bias = rng.normal(size=d), rng.normal(size=d)
    _, xhat, rstd = K.layer_norm_rows(x, gain, bias, 1e-5)
    logits = rng.normal(size=(64 * 11, vocab))
    targets = rng.integers(0, vocab, size=64 * 11)
    tmask = rng.random(64 * 11) > 0.1
    _, ce_probs = K.cross_entropy_rows(logits, targets, tmask, 0.0)
    ids = rng.integers(0, vocab, size=64 * 11)
    table = np.zeros((vocab, d))
    return {
        "softmax_rows(masked)": lambda: K.softmax_rows(scores, mask),
        "softmax_rows_backward": lambda: K.softmax_rows_backward(probs, gy),
        "layer_norm_rows": lambda: K.layer_norm_rows(x, gain, bias, 1e-5),
        "layer_norm_rows_backward": lambda: K.layer_norm_rows_backward(x, xhat, rstd, gain),
        "cross_entropy_rows": lambda: K.cross_entropy_rows(logits, targets, tmask, 0.0),
        "cross_entropy_rows_backward":
            lambda: K.cross_entropy_rows_backward(ce_probs, targets, tmask, 0.0, 1.0),
        "scatter_add_rows": lambda: K.scatter_add_rows(table, ids, x),
    }


def training_step_case(rng):
    langs = ["en", "it", "nl", "ro"]
    vocab = Vocab.build(langs, [f"w{i:03d}" for i in range(213)])
    cfg = ModelConfig(vocab_size=len(vocab), languages=langs,
                      lang_tag_ids=[vocab.tag_id(x) for x in langs],
                      pad_id=vocab.pad_id, eos_id=vocab.eos_id,
                      interlingua=InterlinguaConfig("variable"))
    model = init_model(cfg, seed=0)
    params = model.parameters()
    state = AdamState()
    n, len_i, first = 64, 8, 8
    pairs = [SentencePair(tuple(rng.integers(first, len(vocab), size=int(rng.integers(6, 12)))),
                          tuple(rng.integers(first, len(vocab), size=len_i)), "it", "en", len_i)
             for _ in range(n)]
    batch = make_batch(pairs, vocab, cfg.max_len)
    drop = np.random.default_rng(0)

    def step():
        with T.Tape() as tape:
            loss, _ = combined_loss(batch, model, LossWeights(), drop)
        T.backward(loss, tape)
        adam_step(params, state)
        T.zero_grad(params.values())

    return step


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    print(f"{'kernel':<30}{'numpy ms':>10}{'numba ms':>10}{'speed-up':>10}")
    for name, fn in cases.items():
        t = {}
        for backend in ("numpy", "numba"):
            K.set_backend(backend)
            t[backend] = best_of(fn, args.repeat)
        print(f"{name:<30}{t['numpy'] * 1e3:>10.3f}{t['numba'] * 1e3:>10.3f}"
              f"{t['numpy'] / t['numba']:>10.2f}")
    t = {}
    for backend in ("numpy", "numba"):
        K.set_backend(backend)
        t[backend] = best_of(training_step_case(np.random.default_rng(1)), max(3, args.repeat // 4))
    print(f"{'training step (B=64)':<30}{t['numpy'] * 1e3:>10.1f}{t['numba'] * 1e3:>10.1f}"
          f"{t['numpy'] / t['numba']:>10.2f}")


if __name__ == "__main__":
    main()
