"""Interlingua bridge between encoder and decoder.

The bridge turns encoder states ``H_S`` (``k`` rows) into ``len_I`` interlingua
rows, independent of ``k``. Queries come from per-language (or one universal)
embedding tables; in variable mode the first ``len_I`` rows of the source
language's table are used and ``len_I`` is either the centric-side length
(training) or the output of a length classifier (inference on non-centric
sources).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .errors import DataError, ShapeError
from .nn import (AttentionParams, FeedForwardParams, LayerNormParams, ParamGroup,
                 feed_forward, ln, multi_head_attention)
from .tensor import Tensor

log = logging.getLogger(__name__)

MODES = ("none", "fixed_universal", "fixed_language_specific", "variable")


@dataclass
class InterlinguaConfig:
    mode: str = "variable"
    layers: int = 3
    max_len: int = 256
    fixed_len: int = 8

    def validate(self) -> None:
        if self.mode not in MODES:
            raise DataError(f"unknown interlingua mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "none":
            return
        if self.layers < 1:
            raise DataError("interlingua modes need at least one interlingua layer")
        if not 1 <= self.fixed_len <= self.max_len:
            raise DataError(f"fixed_len must lie in [1, {self.max_len}], got {self.fixed_len}")


@dataclass
class InterlinguaQueryTable(ParamGroup):
    """Query embeddings stored as one ``(n_tables * rows, d)`` matrix.

    Table ``i`` occupies rows ``i*rows .. (i+1)*rows - 1``; row ``j`` is the
    query for interlingua position ``j``.
    """

    weight: Tensor
    rows: int
    languages: list[str] | None = None  # None: a single universal table

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, rows: int,
             languages: list[str] | None) -> "InterlinguaQueryTable":
        n = 1 if languages is None else len(languages)
        w = rng.normal(0.0, d ** -0.5, size=(n * rows, d))
        return cls(Tensor(w, requires_grad=True), rows, None if languages is None else list(languages))

    def table_index(self, language: str) -> int:
        if self.languages is None:
            return 0
        try:
            return self.languages.index(language)
        except ValueError:
            raise DataError(f"no interlingua query table for language {language!r}") from None

    def matrix(self, language: str) -> np.ndarray:
        i = self.table_index(language)
        return self.weight.data[i * self.rows:(i + 1) * self.rows]


def slice_query(table: InterlinguaQueryTable, source_language: str, len_i: int) -> Tensor:
    """First ``len_i`` query rows of the source language's table, ``(len_i, d)``."""
    if not 1 <= len_i <= table.rows:
        raise ShapeError(f"len_I={len_i} outside [1, {table.rows}]")
    base = table.table_index(source_language) * table.rows
    return T.getitem(table.weight, slice(base, base + len_i))


def batch_queries(table: InterlinguaQueryTable, languages: list[str], len_i: int) -> Tensor:
    """Queries for a batch sharing ``len_i``: ``(B, len_i, d)``."""
    if not 1 <= len_i <= table.rows:
        raise ShapeError(f"len_I={len_i} outside [1, {table.rows}]")
    base = np.array([table.table_index(lang) * table.rows for lang in languages])
    ids = base[:, None] + np.arange(len_i)[None, :]
    return T.take(table.weight, ids)


@dataclass
class LengthPredictorParams(ParamGroup):
    """Linear classifier over mean-pooled encoder states; class i means length i+1."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, classes: int) -> "LengthPredictorParams":
        return cls(nn.xavier(rng, d, classes), Tensor(np.zeros(classes), requires_grad=True))


def length_logits(h_s: Tensor, valid: np.ndarray, params: LengthPredictorParams) -> Tensor:
    """Logits ``(B, K)`` from the mean of ``h_s`` over each row's valid positions."""
    h_s, _ = nn._as_batch(h_s)
    valid = np.atleast_2d(np.asarray(valid, dtype=bool))
    counts = valid.sum(axis=1, keepdims=True)
    if (counts == 0).any():
        raise ShapeError("length predictor needs at least one valid position per row")
    pool = Tensor((valid / counts)[:, None, :])
    pooled = T.matmul(pool, h_s)
    b, _, d = pooled.shape
    return T.linear(T.reshape(pooled, (b, d)), params.weight, params.bias)


def predict_length(h_s: Tensor, k, params: LengthPredictorParams) -> np.ndarray | int:
    """Predicted ``len_I`` (argmax class + 1, ties to the smaller length).

    ``h_s`` is ``(k_max, d)`` with ``k`` an int, or ``(B, k_max, d)`` with ``k``
    a per-row array of true lengths. Padding beyond ``k`` is ignored.
    """
    single = h_s.ndim == 2
    ks = np.atleast_1d(np.asarray(k))
    if (ks < 1).any():
        raise ShapeError("predict_length needs k >= 1")
    width = h_s.shape[-2]
    logits = length_logits(h_s, nn.padding_mask(ks, width), params)
    lengths = np.argmax(logits.data, axis=-1) + 1
    return int(lengths[0]) if single else lengths


@dataclass
class InterlinguaLayerParams(ParamGroup):
    """One bridge layer; the first uses a feed-forward block instead of self-attention."""

    cross_attn: AttentionParams
    ffn: FeedForwardParams
    ln_pre: LayerNormParams
    ln_cross: LayerNormParams
    ln_ffn: LayerNormParams
    self_attn: AttentionParams | None = None
    pre_ffn: FeedForwardParams | None = None

    @classmethod
    def init(cls, rng, d, heads, ff, first: bool) -> "InterlinguaLayerParams":
        if first:
            pre = dict(pre_ffn=FeedForwardParams.init(rng, d, ff))
        else:
            pre = dict(self_attn=AttentionParams.init(rng, d, heads))
        return cls(AttentionParams.init(rng, d, heads), FeedForwardParams.init(rng, d, ff),
                   LayerNormParams.init(d), LayerNormParams.init(d), LayerNormParams.init(d), **pre)

    @property
    def is_first(self) -> bool:
        return self.pre_ffn is not None


@dataclass
class InterlinguaActivations:
    q_i: Tensor
    q_i_prime: list[Tensor] = field(default_factory=list)
    h_ei: list[Tensor] = field(default_factory=list)
    h_i: Tensor | None = None
    length_logits: Tensor | None = None
    len_i: int = 0


def interlingua_layer(q: Tensor, h_s: Tensor, src_valid, p: InterlinguaLayerParams,
                      rate: float = 0.0, rng=None) -> tuple[Tensor, Tensor, Tensor]:
    """Returns ``(Q_I', H_EI, output)`` for one layer."""
    if p.is_first:
        # first residual connection removed
        q_prime = T.dropout(feed_forward(ln(q, p.ln_pre), p.pre_ffn, rate, rng), rate, rng)
    else:
        y = ln(q, p.ln_pre)
        q_prime = q + T.dropout(multi_head_attention(y, y, None, p.self_attn), rate, rng)
    h_ei = q_prime + T.dropout(
        multi_head_attention(ln(q_prime, p.ln_cross), h_s, src_valid, p.cross_attn), rate, rng)
    out = h_ei + T.dropout(feed_forward(ln(h_ei, p.ln_ffn), p.ffn, rate, rng), rate, rng)
    return q_prime, h_ei, out


def interlingua_forward(h_s: Tensor, src_valid, q_i: Tensor, layers: list[InterlinguaLayerParams],
                        final_ln: LayerNormParams, rate: float = 0.0,
                        rng=None) -> InterlinguaActivations:
    """Run the bridge layers; ``H_I`` has as many rows as ``q_i`` whatever ``k`` is."""
    if h_s.ndim != q_i.ndim or h_s.shape[-1] != q_i.shape[-1]:
        raise ShapeError(f"H_S {h_s.shape} and Q_I {q_i.shape} are incompatible")
    acts = InterlinguaActivations(q_i=q_i, len_i=q_i.shape[-2])
    x = q_i
    for p in layers:
        q_prime, h_ei, x = interlingua_layer(x, h_s, src_valid, p, rate, rng)
        acts.q_i_prime.append(q_prime)
        acts.h_ei.append(h_ei)
    acts.h_i = ln(x, final_ln)
    return acts


def compute_interlingua_length(pair, centric_language: str, max_len: int) -> int:
    """Teacher-forced ``len_I``: length of the pair's centric-language side, clamped to ``max_len``."""
    if pair.src_lang == centric_language:
        n = len(pair.src)
    elif pair.tgt_lang == centric_language:
        n = len(pair.tgt)
    else:
        raise DataError(f"pair {pair.src_lang}->{pair.tgt_lang} has no "
                        f"{centric_language!r} side to take the interlingua length from")
    if n > max_len:
        log.warning("centric sentence of length %d truncated to interlingua length %d", n, max_len)
        n = max_len
    return max(n, 1)
