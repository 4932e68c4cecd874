"""Beam search, gold-length decoding and pivot translation.

Inference runs on plain numpy arrays with a per-layer key/value cache, so a
decode step costs one position per hypothesis instead of re-running the whole
prefix. The generic search in :func:`beam_search_core` only needs an object
with ``step``/``reorder`` methods, which keeps it testable on hand-built toy
models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import _kernels as K
from . import nn
from .errors import DataError, ShapeError
from .interlingua import predict_length
from .model import Model, bridge, encoder_forward


@dataclass
class DecodeConfig:
    beam: int = 5
    max_len: int = 64  # generated tokens, clipped to K
    length_penalty: float = 1.0  # score = log p / len ** length_penalty

    def validate(self) -> None:
        if self.beam < 1:
            raise ValueError(f"beam must be >= 1, got {self.beam}")
        if self.max_len < 1:
            raise ValueError(f"max_len must be >= 1, got {self.max_len}")


@dataclass
class Hypothesis:
    tokens: list[int]  # without the end token
    logprob: float
    score: float
    truncated: bool = False


@dataclass
class Translation:
    tokens: list[int]
    score: float
    len_i: int  # interlingua length used (0 in mode none)
    predicted_len: int | None = None  # predictor output, when it was consulted
    truncated: bool = False


class StepModel(Protocol):
    def step(self, last_tokens: np.ndarray) -> np.ndarray:
        """Log-probabilities ``(rows, V)`` for the next token of every live row."""

    def reorder(self, rows: np.ndarray) -> None:
        """Keep only ``rows`` (in this order) for the next step."""


def _normalise(logprob: float, length: int, alpha: float) -> float:
    return logprob / (max(length, 1) ** alpha)


def beam_search_core(model: StepModel, first_tokens: np.ndarray, eos_id: int,
                     cfg: DecodeConfig) -> list[Hypothesis]:
    """Length-normalised beam search for ``len(first_tokens)`` independent sources.

    Row ``i`` of ``model`` starts as source ``i``. Each step ranks the
    ``beam x V`` continuations of a source by cumulative log-probability, with
    ties going to the earlier beam slot and then the smaller token id. An end
    token among the top ``beam`` candidates finishes that hypothesis; other
    candidates fill the live beam. A source stops once ``beam`` hypotheses have
    finished. Live hypotheses still open after ``max_len`` steps are closed as
    truncated. The best finished hypothesis by normalised score is returned,
    ties going to the one finished first.
    """
    cfg.validate()
    n_src = len(first_tokens)
    alpha = cfg.length_penalty
    beam = cfg.beam
    # live[s] = list of (tokens, logprob); rows are laid out source by source
    live: list[list[tuple[list[int], float]]] = [[([], 0.0)] for _ in range(n_src)]
    finished: list[list[Hypothesis]] = [[] for _ in range(n_src)]
    last = np.asarray(first_tokens, dtype=np.int64)
    for t in range(cfg.max_len):
        logp = model.step(last)
        keep_rows: list[int] = []
        next_last: list[int] = []
        row = 0
        for s in range(n_src):
            hyps = live[s]
            if not hyps:
                continue
            n = len(hyps)
            block = logp[row:row + n]
            base = np.array([h[1] for h in hyps])
            scores = (base[:, None] + block).reshape(-1)
            v = block.shape[1]
            take = min(2 * beam, scores.size)
            # rank: score desc, then slot asc, then token asc (flat index asc)
            if take < scores.size:
                cand = np.argpartition(-scores, take - 1)[:take]
                cutoff = scores[cand].min()
                cand = np.flatnonzero(scores >= cutoff)
            else:
                cand = np.arange(scores.size)
            order = cand[np.lexsort((cand, -scores[cand]))][:take]
            new_live = []
            for rank, flat in enumerate(order):
                slot, tok = divmod(int(flat), v)
                total = float(scores[flat])
                tokens = hyps[slot][0]
                if tok == eos_id:
                    if rank < beam:
                        finished[s].append(Hypothesis(list(tokens), total,
                                                      _normalise(total, len(tokens) + 1, alpha)))
                elif len(new_live) < beam:
                    new_live.append((tokens + [tok], total))
                    keep_rows.append(row + slot)
                    next_last.append(tok)
            row += n
            if len(finished[s]) >= beam:
                # drop the rows queued for this source
                drop = len(new_live)
                if drop:
                    del keep_rows[-drop:]
                    del next_last[-drop:]
                new_live = []
            live[s] = new_live
        if not keep_rows:
            break
        model.reorder(np.asarray(keep_rows, dtype=np.int64))
        last = np.asarray(next_last, dtype=np.int64)
    out = []
    for s in range(n_src):
        for tokens, total in live[s]:
            finished[s].append(Hypothesis(tokens, total, _normalise(total, len(tokens), alpha),
                                          truncated=True))
        best = finished[s][0]
        for h in finished[s][1:]:
            if h.score > best.score:
                best = h
        out.append(best)
    return out


# ---------------------------------------------------------------------------
# cached numpy decoder
# ---------------------------------------------------------------------------


def _layer_norm(x: np.ndarray, p: nn.LayerNormParams, eps: float = 1e-5) -> np.ndarray:
    d = x.shape[-1]
    y, _, _ = K.layer_norm_rows(np.ascontiguousarray(x.reshape(-1, d)), p.gain.data,
                                p.bias.data, eps)
    return y.reshape(x.shape)


def _heads(x: np.ndarray, w, b, h: int) -> np.ndarray:
    n, length, d = x.shape
    y = x.reshape(-1, d) @ w.data + b.data
    return y.reshape(n, length, h, d // h).transpose(0, 2, 1, 3)


def _attend(q: np.ndarray, k: np.ndarray, v: np.ndarray, mask, p: nn.AttentionParams) -> np.ndarray:
    n, h, lq, dh = q.shape
    scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    ctx = np.matmul(probs, v).transpose(0, 2, 1, 3).reshape(n * lq, h * dh)
    return (ctx @ p.wo.data + p.bo.data).reshape(n, lq, h * dh)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class CachedDecoder:
    """Incremental decoder over fixed memory rows; implements :class:`StepModel`."""

    def __init__(self, model: Model, memory: np.ndarray, memory_valid: np.ndarray):
        if memory.ndim != 3 or memory.shape[1] == 0:
            raise ShapeError("decoder memory H_I is empty")
        self.model = model
        self.heads = model.config.heads
        self.mask = np.asarray(memory_valid, dtype=bool)[:, None, None, :]
        self.cross = [(_heads(memory, L.cross_attn.wk, L.cross_attn.bk, self.heads),
                       _heads(memory, L.cross_attn.wv, L.cross_attn.bv, self.heads))
                      for L in model.decoder]
        n = memory.shape[0]
        dh = model.config.d // self.heads
        self.self_kv = [(np.zeros((n, self.heads, 0, dh)), np.zeros((n, self.heads, 0, dh)))
                        for _ in model.decoder]
        self.pos = 0

    def step(self, last_tokens: np.ndarray) -> np.ndarray:
        m = self.model
        d = m.config.d
        if self.pos >= m.config.max_len:
            raise ShapeError(f"decoder prefix would exceed K={m.config.max_len}")
        emb = m.embedding.data
        x = emb[last_tokens] * math.sqrt(d) + nn.sinusoidal_positions(self.pos + 1, d)[self.pos]
        x = x[:, None, :]
        for i, L in enumerate(m.decoder):
            y = _layer_norm(x, L.ln_self)
            a = L.self_attn
            k_old, v_old = self.self_kv[i]
            k = np.concatenate([k_old, _heads(y, a.wk, a.bk, self.heads)], axis=2)
            v = np.concatenate([v_old, _heads(y, a.wv, a.bv, self.heads)], axis=2)
            self.self_kv[i] = (k, v)
            x = x + _attend(_heads(y, a.wq, a.bq, self.heads), k, v, None, a)
            y = _layer_norm(x, L.ln_cross)
            c = L.cross_attn
            ck, cv = self.cross[i]
            x = x + _attend(_heads(y, c.wq, c.bq, self.heads), ck, cv, self.mask, c)
            y = _layer_norm(x, L.ln_ffn)
            f = L.ffn
            hid = np.maximum(y.reshape(-1, d) @ f.w1.data + f.b1.data, 0.0)
            x = x + (hid @ f.w2.data + f.b2.data).reshape(x.shape)
        x = _layer_norm(x, m.dec_ln)[:, 0, :]
        self.pos += 1
        return _log_softmax(x @ emb.T)

    def reorder(self, rows: np.ndarray) -> None:
        self.mask = self.mask[rows]
        self.cross = [(k[rows], v[rows]) for k, v in self.cross]
        self.self_kv = [(k[rows], v[rows]) for k, v in self.self_kv]


# ---------------------------------------------------------------------------
# model-level entry points
# ---------------------------------------------------------------------------


def _encode(model: Model, sources: Sequence[Sequence[int]], src_lang: str):
    tag = model.tag_id(src_lang)
    ks = np.array([len(s) + 1 for s in sources])
    width = int(ks.max())
    ids = np.full((len(sources), width), model.config.pad_id, dtype=np.int64)
    for i, s in enumerate(sources):
        ids[i, 0] = tag
        ids[i, 1:len(s) + 1] = s
    valid = nn.padding_mask(ks, width)
    return encoder_forward(ids, model, valid), valid, ks


def interlingua_lengths(model: Model, h_s, ks: np.ndarray, sources, src_lang: str,
                        gold: Sequence[int] | None = None):
    """``(len_i, predicted)`` arrays for a batch; ``predicted`` is -1 where unused.

    Variable mode: gold lengths if given, else the source's own length for a
    centric source and the length predictor otherwise. Fixed modes use the
    configured width; mode none has no interlingua (length 0).
    """
    n = len(sources)
    predicted = np.full(n, -1, dtype=np.int64)
    cfg = model.config
    if cfg.mode == "none":
        return np.zeros(n, dtype=np.int64), predicted
    if cfg.mode != "variable":
        return np.full(n, cfg.interlingua.fixed_len, dtype=np.int64), predicted
    if gold is not None:
        lens = np.asarray(gold, dtype=np.int64)
        if lens.shape != (n,):
            raise ShapeError(f"{lens.size} gold lengths for {n} sources")
    elif src_lang == cfg.centric:
        lens = np.array([len(s) for s in sources], dtype=np.int64)
    else:
        predicted = np.asarray(predict_length(h_s, ks, model.length_predictor), dtype=np.int64)
        lens = predicted.copy()
    return np.clip(lens, 1, cfg.max_len), predicted


def translate_batch(model: Model, sources: Sequence[Sequence[int]], src_lang: str, tgt_lang: str,
                    cfg: DecodeConfig | None = None,
                    gold_lengths: Sequence[int] | None = None) -> list[Translation]:
    """Beam-decode every source (token ids without tag) into ``tgt_lang``."""
    cfg = cfg or DecodeConfig()
    if not sources:
        return []
    tgt_tag = model.tag_id(tgt_lang)
    step_cfg = DecodeConfig(cfg.beam, min(cfg.max_len, model.config.max_len - 1),
                            cfg.length_penalty)
    h_s, valid, ks = _encode(model, sources, src_lang)
    lens, predicted = interlingua_lengths(model, h_s, ks, sources, src_lang, gold_lengths)
    results: list[Translation | None] = [None] * len(sources)
    groups: dict[int, list[int]] = {}
    for i, n in enumerate(lens):
        groups.setdefault(int(n), []).append(i)
    for len_i in sorted(groups):
        idx = np.array(groups[len_i])
        memory, mem_valid, _ = bridge(h_s[idx] if len(idx) < len(sources) else h_s,
                                      valid[idx], [src_lang] * len(idx),
                                      len_i if len_i > 0 else None, model)
        dec = CachedDecoder(model, memory.data, mem_valid)
        hyps = beam_search_core(dec, np.full(len(idx), tgt_tag), model.config.eos_id, step_cfg)
        for j, h in zip(idx, hyps):
            results[j] = Translation(h.tokens, h.score, int(lens[j]),
                                     None if predicted[j] < 0 else int(predicted[j]), h.truncated)
    return results


def beam_search(model: Model, source_ids: Sequence[int], source_language: str,
                target_language: str, cfg: DecodeConfig | None = None) -> list[int]:
    """Best target token ids for one source sentence (ids without tag)."""
    return translate_batch(model, [source_ids], source_language, target_language, cfg)[0].tokens


def translate_with_gold_length(model: Model, pair, cfg: DecodeConfig | None = None) -> list[int]:
    """Decode ``pair.src`` with ``len_I`` forced to the pair's centric-side length."""
    gold = [pair.centric_len] if model.config.mode == "variable" else None
    return translate_batch(model, [pair.src], pair.src_lang, pair.tgt_lang, cfg, gold)[0].tokens


def pivot_translate_batch(model: Model, sources: Sequence[Sequence[int]], src_lang: str,
                          tgt_lang: str, cfg: DecodeConfig | None = None,
                          allow_empty: bool = False) -> list[Translation]:
    """Two hops through the centric language; a hop is skipped when an end is centric.

    An empty intermediate sentence raises :class:`DataError` unless
    ``allow_empty`` is set, in which case the second hop sees just the tag.
    """
    centric = model.config.centric
    if src_lang == centric or tgt_lang == centric:
        return translate_batch(model, sources, src_lang, tgt_lang, cfg)
    middle = translate_batch(model, sources, src_lang, centric, cfg)
    empty = [i for i, t in enumerate(middle) if not t.tokens]
    if empty and not allow_empty:
        raise DataError(f"pivot produced an empty {centric} sentence for source #{empty[0]}")
    return translate_batch(model, [t.tokens for t in middle], centric, tgt_lang, cfg)


def pivot_translate(model: Model, source: Sequence[int], source_language: str,
                    target_language: str, cfg: DecodeConfig | None = None) -> list[int]:
    return pivot_translate_batch(model, [source], source_language, target_language,
                                 cfg)[0].tokens
