"""Composite objective, training loop, validation and parameter accounting."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .corpus import Batch, Corpus, SentencePair, load_corpus, make_batches
from .errors import DataError, NumericError, ShapeError
from .interlingua import InterlinguaConfig, length_logits
from .model import Model, ModelConfig, bridge, decoder_forward, encoder_forward, init_model
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

CSV_FIELDS = ["step", "epoch", "l_nmt", "l_ia", "l_lp", "total", "split"]


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.1
    align_fixed: bool = True  # apply the alignment term in fixed-length modes too
    lp_on_centric: bool = True  # also train the length predictor on centric sources
    lp_detach: bool = False  # keep length-prediction gradients out of the encoder

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise DataError("loss weights must be nonnegative")


@dataclass
class LossBreakdown:
    l_nmt: float
    l_ia: float
    l_lp: float
    total: float
    tokens: int = 0


def interlingua_alignment_loss(h_x: Tensor, h_y: Tensor) -> Tensor:
    """One minus the mean row-wise cosine between two interlingua sequences.

    Accepts ``(len_I, d)`` or batched ``(B, len_I, d)``; the result lies in [0, 2].
    """
    if h_x.shape != h_y.shape:
        raise ShapeError(f"interlingua widths differ ({h_x.shape} vs {h_y.shape}); "
                         "teacher-forced lengths should make them equal")
    return 1.0 - T.mean(T.cosine_similarity(h_x, h_y))


def _stack_ids(a: np.ndarray, av: np.ndarray, b: np.ndarray, bv: np.ndarray, pad: int):
    width = max(a.shape[1], b.shape[1])
    ids = np.full((a.shape[0] + b.shape[0], width), pad, dtype=np.int64)
    valid = np.zeros(ids.shape, dtype=bool)
    ids[:a.shape[0], :a.shape[1]] = a
    ids[a.shape[0]:, :b.shape[1]] = b
    valid[:a.shape[0], :a.shape[1]] = av
    valid[a.shape[0]:, :b.shape[1]] = bv
    return ids, valid


def combined_loss(batch: Batch, model: Model, weights: LossWeights,
                  rng: np.random.Generator | None = None) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of translation, alignment and length-prediction losses.

    The alignment term needs ``H_I(Y)``: the target sentence (with its own tag
    and its own language's query table) runs through encoder and bridge
    alongside the source. Terms whose weight is zero, or that do not apply to
    the model's mode, are skipped and reported as 0.
    """
    cfg = model.config
    rate = cfg.dropout if rng is not None else 0.0
    mode = cfg.mode
    n = len(batch)
    use_ia = (weights.beta > 0 and mode != "none"
              and (mode == "variable" or weights.align_fixed))
    use_lp = weights.gamma > 0 and mode == "variable"

    if use_ia:
        ids, valid = _stack_ids(batch.src_ids, batch.src_valid, batch.tgt_in, batch.tgt_valid,
                                cfg.pad_id)
        langs = batch.src_langs + batch.tgt_langs
    else:
        ids, valid, langs = batch.src_ids, batch.src_valid, batch.src_langs
    h_s = encoder_forward(ids, model, valid, rate, rng)
    memory, mem_valid, _ = bridge(h_s, valid, langs, batch.len_i, model, rate, rng)
    if use_ia:
        h_x, h_y = memory[:n], memory[n:]
        mem_valid = mem_valid[:n]
    else:
        h_x = memory

    logits = decoder_forward(h_x, batch.tgt_in, model, mem_valid, batch.tgt_valid, rate, rng)
    l_nmt = T.cross_entropy(logits, batch.tgt_out, batch.tgt_valid, cfg.label_smoothing)
    total = l_nmt * weights.alpha
    l_ia = l_lp = None
    if use_ia:
        l_ia = interlingua_alignment_loss(h_x, h_y)
        total = total + l_ia * weights.beta
    if use_lp:
        hs_x = h_s[:n] if use_ia else h_s
        if weights.lp_detach:
            hs_x = Tensor(hs_x.data)
        rows = None
        if not weights.lp_on_centric:
            rows = np.array([lang != cfg.centric for lang in batch.src_langs])
        if rows is None or rows.any():
            logits_len = length_logits(hs_x, valid[:n], model.length_predictor)
            l_lp = T.cross_entropy(logits_len, np.full(n, batch.len_i - 1), rows)
            total = total + l_lp * weights.gamma
    parts = LossBreakdown(
        l_nmt=l_nmt.item(),
        l_ia=0.0 if l_ia is None else l_ia.item(),
        l_lp=0.0 if l_lp is None else l_lp.item(),
        total=total.item(),
        tokens=int(batch.tgt_valid.sum()),
    )
    return total, parts


@dataclass
class ParameterCount:
    total: int
    by_module: dict[str, int]


def count_parameters(model) -> ParameterCount:
    """Exact trainable scalar count, grouped by top-level parameter name."""
    named = model.items() if isinstance(model, dict) else model.named_parameters()
    by_module: dict[str, int] = {}
    total = 0
    for name, p in named:
        size = int(np.prod(p.shape)) if p.shape else 1
        key = name.split(".")[0]
        by_module[key] = by_module.get(key, 0) + size
        total += size
    return ParameterCount(total, by_module)


# ---------------------------------------------------------------------------
# run configuration and loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    corpus_dir: str
    out_dir: str
    mode: str = "variable"
    d: int = 64
    heads: int = 4
    ff: int = 256
    enc_layers: int | None = None  # default: 6 - interlingua_layers (6 in mode none)
    interlingua_layers: int = 3
    dec_layers: int = 6
    max_len: int = 256
    fixed_len: int | None = None  # default: rounded mean centric training length
    dropout: float = 0.1
    label_smoothing: float = 0.0
    epochs: int = 10
    batch_sentences: int = 64
    lr: float = 1e-3
    warmup_steps: int = 200
    seed: int = 1
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.1
    align_fixed: bool = True
    lp_on_centric: bool = True
    lp_detach: bool = False
    max_train_pairs: int | None = None

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read train config {path}: {exc}") from exc
        base = Path(path).parent
        for key in ("corpus_dir", "out_dir"):
            if key in data and not Path(data[key]).is_absolute():
                data[key] = str(base / data[key])
        try:
            return cls(**data)
        except TypeError as exc:
            raise DataError(f"bad train config {path}: {exc}") from exc

    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma, self.align_fixed,
                           self.lp_on_centric, self.lp_detach)


@dataclass
class TrainResult:
    out_dir: Path
    best_checkpoint: Path
    last_checkpoint: Path
    metrics_csv: Path
    best_valid_l_nmt: float
    best_epoch: int
    history: list[dict] = field(default_factory=list)
    seconds: float = 0.0


def model_config_for(cfg: TrainConfig, corpus: Corpus, train_pairs: list[SentencePair]) -> ModelConfig:
    m = 0 if cfg.mode == "none" else cfg.interlingua_layers
    enc = cfg.enc_layers if cfg.enc_layers is not None else 6 - m
    fixed_len = cfg.fixed_len
    if fixed_len is None:
        centric = [p.centric_len for p in train_pairs]
        fixed_len = max(1, int(round(float(np.mean(centric))))) if centric else 1
    langs = corpus.config.all_languages
    vocab = corpus.vocab
    return ModelConfig(
        vocab_size=len(vocab), languages=langs, lang_tag_ids=[vocab.tag_id(x) for x in langs],
        pad_id=vocab.pad_id, eos_id=vocab.eos_id, centric=corpus.config.centric,
        d=cfg.d, heads=cfg.heads, ff=cfg.ff, enc_layers=enc, dec_layers=cfg.dec_layers,
        depth_budget=enc + m,
        interlingua=InterlinguaConfig(mode=cfg.mode, layers=m if m else 3,
                                      max_len=cfg.max_len, fixed_len=fixed_len),
        dropout=cfg.dropout, label_smoothing=cfg.label_smoothing)


def _epoch_batches(pairs, vocab, max_len, size, rng) -> list[Batch]:
    groups: dict[int, list[int]] = {}
    for i, p in enumerate(pairs):
        groups.setdefault(min(p.centric_len, max_len), []).append(i)
    chunks = []
    for length in sorted(groups):
        idx = np.array(groups[length])
        rng.shuffle(idx)
        for s in range(0, idx.size, size):
            chunks.append([pairs[j] for j in idx[s:s + size]])
    order = rng.permutation(len(chunks))
    batches = []
    for o in order:
        batches.extend(make_batches(chunks[o], vocab, max_len))
    return batches


def evaluate_loss(model: Model, batches: list[Batch], weights: LossWeights) -> LossBreakdown:
    """Token-weighted mean of each term over ``batches`` without dropout."""
    nmt = ia = lp = 0.0
    sent = tokens = 0
    for b in batches:
        _, parts = combined_loss(b, model, weights)
        nmt += parts.l_nmt * parts.tokens
        ia += parts.l_ia * len(b)
        lp += parts.l_lp * len(b)
        tokens += parts.tokens
        sent += len(b)
    l_nmt = nmt / max(tokens, 1)
    l_ia = ia / max(sent, 1)
    l_lp = lp / max(sent, 1)
    total = weights.alpha * l_nmt + weights.beta * l_ia + weights.gamma * l_lp
    return LossBreakdown(l_nmt, l_ia, l_lp, total, tokens)


def train(cfg: TrainConfig, corpus: Corpus | None = None,
          train_pairs: list[SentencePair] | None = None,
          valid_pairs: list[SentencePair] | None = None) -> TrainResult:
    """Minibatch Adam over length-grouped batches; keeps the lowest-validation-L_NMT checkpoint.

    Writes ``metrics.csv`` (one ``train`` row per step, one ``valid`` row per
    epoch), ``best.ckpt``, ``last.ckpt`` and ``train_config.json`` to
    ``cfg.out_dir``. A non-finite loss aborts with ``diagnostic.json`` and
    ``diagnostic.ckpt`` written next to them.
    """
    start = time.perf_counter()
    corpus = corpus or load_corpus(cfg.corpus_dir)
    if train_pairs is None:
        train_pairs = corpus.split_pairs("train")
        if cfg.max_train_pairs:
            train_pairs = train_pairs[:cfg.max_train_pairs]
    if valid_pairs is None:
        valid_pairs = corpus.split_pairs("valid")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train_config.json").write_text(json.dumps(asdict(cfg), indent=2))

    mcfg = model_config_for(cfg, corpus, train_pairs)
    model = init_model(mcfg, seed=cfg.seed)
    params = model.parameters()
    state = AdamState(base_lr=cfg.lr, warmup_steps=cfg.warmup_steps)
    weights = cfg.weights()
    rng = np.random.default_rng(cfg.seed + 7919)
    drop_rng = np.random.default_rng(cfg.seed + 104729) if mcfg.dropout > 0 else None
    valid_batches = make_batches(valid_pairs, corpus.vocab, mcfg.max_len, cfg.batch_sentences)
    extra = {"corpus_dir": str(corpus.root), "train_config": asdict(cfg),
             "vocab": corpus.vocab.tokens}

    best_path, last_path, csv_path = out / "best.ckpt", out / "last.ckpt", out / "metrics.csv"
    best, best_epoch = float("inf"), 0
    history: list[dict] = []
    step, epoch, batch = 0, 0, None
    try:
        if valid_batches:
            best = evaluate_loss(model, valid_batches, weights).l_nmt
    except NumericError as exc:
        _dump_diagnostic(out, model, state, epoch, step, None, history, exc)
        raise
    save_checkpoint(best_path, model, state, 0, best, extra)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for epoch in range(1, cfg.epochs + 1):
            for batch in _epoch_batches(train_pairs, corpus.vocab, mcfg.max_len,
                                        cfg.batch_sentences, rng):
                step += 1
                try:
                    with Tape() as tape:
                        loss, parts = combined_loss(batch, model, weights, drop_rng)
                    if not np.isfinite(parts.total):
                        raise NumericError(f"non-finite loss {parts.total}")
                    T.backward(loss, tape)
                    adam_step(params, state)
                except NumericError as exc:
                    _dump_diagnostic(out, model, state, epoch, step, batch, history, exc)
                    raise
                T.zero_grad(params.values())
                row = {"step": step, "epoch": epoch, "l_nmt": parts.l_nmt, "l_ia": parts.l_ia,
                       "l_lp": parts.l_lp, "total": parts.total, "split": "train"}
                writer.writerow(row)
                history.append(row)
            if valid_batches:
                try:
                    v = evaluate_loss(model, valid_batches, weights)
                except NumericError as exc:
                    _dump_diagnostic(out, model, state, epoch, step, None, history, exc)
                    raise
                row = {"step": step, "epoch": epoch, "l_nmt": v.l_nmt, "l_ia": v.l_ia,
                       "l_lp": v.l_lp, "total": v.total, "split": "valid"}
                writer.writerow(row)
                history.append(row)
                fh.flush()
                log.info("epoch %d step %d valid l_nmt %.4f", epoch, step, v.l_nmt)
                if v.l_nmt < best:
                    best, best_epoch = v.l_nmt, epoch
                    save_checkpoint(best_path, model, state, epoch, best, extra)
    save_checkpoint(last_path, model, state, cfg.epochs,
                    history[-1]["l_nmt"] if history else best, extra)
    return TrainResult(out, best_path, last_path, csv_path, best, best_epoch, history,
                       time.perf_counter() - start)


def _dump_diagnostic(out: Path, model, state, epoch, step, batch, history, exc) -> None:
    info = {"error": str(exc), "epoch": epoch, "step": step, "phase": "train", "recent": history[-20:]}
    if batch is None:
        info["phase"] = "validation"
    else:
        info.update(batch_len_i=batch.len_i, batch_size=len(batch),
                    directions=sorted({f"{p.src_lang}-{p.tgt_lang}" for p in batch.pairs}))
    (out / "diagnostic.json").write_text(json.dumps(info, indent=2))
    save_checkpoint(out / "diagnostic.ckpt", model, state, epoch, None, {"diagnostic": True})


def alignment_similarity(model: Model, batches: list[Batch]) -> float:
    """Mean per-position cosine between ``H_I(X)`` and ``H_I(Y)`` over ``batches``."""
    if model.config.mode == "none":
        raise ValueError("alignment is undefined without an interlingua")
    total, count = 0.0, 0
    n_pad = model.config.pad_id
    for b in batches:
        n = len(b)
        ids, valid = _stack_ids(b.src_ids, b.src_valid, b.tgt_in, b.tgt_valid, n_pad)
        h_s = encoder_forward(ids, model, valid)
        memory, _, _ = bridge(h_s, valid, b.src_langs + b.tgt_langs, b.len_i, model)
        cos = T.cosine_similarity(memory[:n], memory[n:]).data
        total += float(cos.sum())
        count += cos.size
    return total / max(count, 1)
