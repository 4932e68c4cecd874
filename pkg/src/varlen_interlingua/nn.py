"""Transformer building blocks: attention, feed-forward, encoder/decoder layers.

Sequences are row-major: one row per position, so a sentence of length L is
an ``(L, d)`` array and a batch is ``(B, L, d)``. Layers use the pre-norm
residual layout. Masks are boolean with True marking real positions.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


class ParamGroup:
    """Mixin for dataclasses whose fields are Tensors or nested groups."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            name = f"{prefix}{f.name}"
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, ParamGroup):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, ParamGroup):
                        yield from item.named_parameters(f"{name}.{i}.")


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return _param(rng.uniform(-limit, limit, size=(fan_in, fan_out)))


@dataclass
class LayerNormParams(ParamGroup):
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d: int) -> "LayerNormParams":
        return cls(_param(np.ones(d)), _param(np.zeros(d)))


@dataclass
class AttentionParams(ParamGroup):
    """Query/key/value/output projections; heads are column blocks of width d/h."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    heads: int = 1

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, heads: int) -> "AttentionParams":
        if d % heads:
            raise ShapeError(f"head count {heads} does not divide model dimension {d}")
        z = lambda: _param(np.zeros(d))  # noqa: E731
        return cls(xavier(rng, d, d), z(), xavier(rng, d, d), z(),
                   xavier(rng, d, d), z(), xavier(rng, d, d), z(), heads=heads)


@dataclass
class FeedForwardParams(ParamGroup):
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, ff: int) -> "FeedForwardParams":
        return cls(xavier(rng, d, ff), _param(np.zeros(ff)),
                   xavier(rng, ff, d), _param(np.zeros(d)))


@dataclass
class EncoderLayerParams(ParamGroup):
    self_attn: AttentionParams
    ffn: FeedForwardParams
    ln_attn: LayerNormParams
    ln_ffn: LayerNormParams

    @classmethod
    def init(cls, rng, d, heads, ff) -> "EncoderLayerParams":
        return cls(AttentionParams.init(rng, d, heads), FeedForwardParams.init(rng, d, ff),
                   LayerNormParams.init(d), LayerNormParams.init(d))


@dataclass
class DecoderLayerParams(ParamGroup):
    self_attn: AttentionParams
    cross_attn: AttentionParams
    ffn: FeedForwardParams
    ln_self: LayerNormParams
    ln_cross: LayerNormParams
    ln_ffn: LayerNormParams

    @classmethod
    def init(cls, rng, d, heads, ff) -> "DecoderLayerParams":
        return cls(AttentionParams.init(rng, d, heads), AttentionParams.init(rng, d, heads),
                   FeedForwardParams.init(rng, d, ff), LayerNormParams.init(d),
                   LayerNormParams.init(d), LayerNormParams.init(d))


# ---------------------------------------------------------------------------
# masks and positions
# ---------------------------------------------------------------------------


def padding_mask(lengths, width: int) -> np.ndarray:
    """``(B, width)`` boolean mask whose first ``lengths[b]`` entries are True."""
    lengths = np.asarray(lengths)
    return np.arange(width)[None, :] < lengths[:, None]


def key_mask(valid: np.ndarray) -> np.ndarray:
    """Broadcast a ``(B, L_kv)`` validity mask over heads and queries."""
    return valid[:, None, None, :]


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))[None, None]


_SINUSOID_CACHE: dict[tuple[int, int], np.ndarray] = {}


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    key = (length, d)
    table = _SINUSOID_CACHE.get(key)
    if table is None:
        pos = np.arange(length)[:, None]
        i = np.arange((d + 1) // 2)[None, :]
        angle = pos / np.power(10000.0, 2.0 * i / d)
        table = np.zeros((length, d))
        table[:, 0::2] = np.sin(angle)
        table[:, 1::2] = np.cos(angle[:, : d // 2])
        _SINUSOID_CACHE[key] = table
    return table


def embed_tokens(table: Tensor, ids: np.ndarray) -> Tensor:
    """Scaled token embeddings plus sinusoidal positions, ``(B, L, d)``."""
    d = table.shape[1]
    x = T.take(table, ids) * math.sqrt(d)
    return x + Tensor(sinusoidal_positions(ids.shape[-1], d))


# ---------------------------------------------------------------------------
# sublayers
# ---------------------------------------------------------------------------


def _as_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return T.reshape(x, (1,) + x.shape), True
    return x, False


def multi_head_attention(q_input: Tensor, kv_input: Tensor, mask, params: AttentionParams) -> Tensor:
    """Scaled dot-product attention over ``params.heads`` heads.

    ``q_input`` is ``(B, L_q, d)`` (or ``(L_q, d)``), ``kv_input`` likewise with
    ``L_kv`` rows. ``mask`` is None, a ``(B, L_kv)`` key-validity mask, or any
    boolean array broadcastable to ``(B, h, L_q, L_kv)``. The output always
    has ``L_q`` rows.
    """
    q_input, squeeze = _as_batch(q_input)
    kv_input, _ = _as_batch(kv_input)
    b, lq, d = q_input.shape
    lk = kv_input.shape[1]
    if kv_input.shape[0] != b or kv_input.shape[2] != d:
        raise ShapeError(f"attention inputs disagree: {q_input.shape} vs {kv_input.shape}")
    h = params.heads
    dh = d // h
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim == 1:
            mask = mask[None]
        if mask.ndim == 2:
            if mask.shape[-1] != lk:
                raise ShapeError(f"key mask width {mask.shape[-1]} != {lk} keys")
            mask = key_mask(mask)

    def heads(x, w, bias, n):
        y = T.linear(x, w, bias)
        return T.transpose(T.reshape(y, (b, n, h, dh)), (0, 2, 1, 3))

    q = heads(q_input, params.wq, params.bq, lq)
    k = heads(kv_input, params.wk, params.bk, lk)
    v = heads(kv_input, params.wv, params.bv, lk)
    scores = T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    probs = T.softmax(scores, axis=-1, mask=mask)
    ctx = T.matmul(probs, v)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, lq, d))
    out = T.linear(ctx, params.wo, params.bo)
    if squeeze:
        out = T.reshape(out, (lq, d))
    return out


def feed_forward(x: Tensor, params: FeedForwardParams, rate: float = 0.0, rng=None) -> Tensor:
    hidden = T.dropout(T.relu(T.linear(x, params.w1, params.b1)), rate, rng)
    return T.linear(hidden, params.w2, params.b2)


def ln(x: Tensor, p: LayerNormParams, eps: float = 1e-5) -> Tensor:
    return T.layer_norm(x, p.gain, p.bias, eps)


def encoder_layer(x: Tensor, valid: np.ndarray, p: EncoderLayerParams,
                  rate: float = 0.0, rng=None) -> Tensor:
    y = ln(x, p.ln_attn)
    x = x + T.dropout(multi_head_attention(y, y, valid, p.self_attn), rate, rng)
    return x + T.dropout(feed_forward(ln(x, p.ln_ffn), p.ffn, rate, rng), rate, rng)


def decoder_layer(x: Tensor, memory: Tensor, self_mask: np.ndarray, memory_valid: np.ndarray,
                  p: DecoderLayerParams, rate: float = 0.0, rng=None) -> Tensor:
    y = ln(x, p.ln_self)
    x = x + T.dropout(multi_head_attention(y, y, self_mask, p.self_attn), rate, rng)
    x = x + T.dropout(multi_head_attention(ln(x, p.ln_cross), memory, memory_valid,
                                           p.cross_attn), rate, rng)
    return x + T.dropout(feed_forward(ln(x, p.ln_ffn), p.ffn, rate, rng), rate, rng)
