"""Model configuration, parameter initialisation, and encoder/decoder passes.

Desk-scale defaults (d=64, 4 heads, feed-forward 256) stand in for the
Transformer-base/big settings of full-size experiments (d=512/1024,
8/16 heads, feed-forward 2048/4096), which remain reachable via config.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .errors import DataError, ShapeError
from .interlingua import (InterlinguaConfig, InterlinguaLayerParams, InterlinguaQueryTable,
                          LengthPredictorParams, batch_queries, interlingua_forward)
from .nn import (DecoderLayerParams, EncoderLayerParams, LayerNormParams, ParamGroup)
from .tensor import Tensor


@dataclass
class ModelConfig:
    vocab_size: int
    languages: list[str]
    lang_tag_ids: list[int]
    pad_id: int = 0
    eos_id: int = 2
    centric: str = "en"
    d: int = 64
    heads: int = 4
    ff: int = 256
    enc_layers: int = 3
    dec_layers: int = 6
    depth_budget: int = 6
    interlingua: InterlinguaConfig = field(default_factory=InterlinguaConfig)
    dropout: float = 0.1
    label_smoothing: float = 0.0

    @property
    def mode(self) -> str:
        return self.interlingua.mode

    @property
    def max_len(self) -> int:
        return self.interlingua.max_len

    def validate(self) -> None:
        self.interlingua.validate()
        if self.d % self.heads:
            raise DataError(f"heads={self.heads} must divide d={self.d}")
        if len(self.languages) != len(self.lang_tag_ids):
            raise DataError("one language tag id per language is required")
        if self.centric not in self.languages:
            raise DataError(f"centric language {self.centric!r} not among {self.languages}")
        m = 0 if self.mode == "none" else self.interlingua.layers
        if self.enc_layers + m != self.depth_budget:
            raise DataError(f"encoder layers ({self.enc_layers}) + interlingua layers ({m}) "
                            f"must equal depth_budget={self.depth_budget}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        data["interlingua"] = InterlinguaConfig(**data.get("interlingua", {}))
        return cls(**data)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class Model(ParamGroup):
    config: ModelConfig
    embedding: Tensor
    encoder: list[EncoderLayerParams]
    enc_ln: LayerNormParams
    decoder: list[DecoderLayerParams]
    dec_ln: LayerNormParams
    interlingua: list[InterlinguaLayerParams] = field(default_factory=list)
    intl_ln: LayerNormParams | None = None
    queries: InterlinguaQueryTable | None = None
    length_predictor: LengthPredictorParams | None = None

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def lang_index(self, language: str) -> int:
        try:
            return self.config.languages.index(language)
        except ValueError:
            raise DataError(f"unknown language {language!r}") from None

    def tag_id(self, language: str) -> int:
        return self.config.lang_tag_ids[self.lang_index(language)]


def init_model(config: ModelConfig, seed: int = 0) -> Model:
    config.validate()
    rng = np.random.default_rng(seed)
    d, h, ff = config.d, config.heads, config.ff
    emb = Tensor(rng.normal(0.0, d ** -0.5, size=(config.vocab_size, d)), requires_grad=True)
    encoder = [EncoderLayerParams.init(rng, d, h, ff) for _ in range(config.enc_layers)]
    decoder = [DecoderLayerParams.init(rng, d, h, ff) for _ in range(config.dec_layers)]
    model = Model(config, emb, encoder, LayerNormParams.init(d), decoder, LayerNormParams.init(d))
    ic = config.interlingua
    if ic.mode != "none":
        model.interlingua = [InterlinguaLayerParams.init(rng, d, h, ff, first=(i == 0))
                             for i in range(ic.layers)]
        model.intl_ln = LayerNormParams.init(d)
        if ic.mode == "fixed_universal":
            model.queries = InterlinguaQueryTable.init(rng, d, ic.fixed_len, None)
        elif ic.mode == "fixed_language_specific":
            model.queries = InterlinguaQueryTable.init(rng, d, ic.fixed_len, config.languages)
        else:
            model.queries = InterlinguaQueryTable.init(rng, d, ic.max_len, config.languages)
            model.length_predictor = LengthPredictorParams.init(rng, d, ic.max_len)
    return model


def _check_ids(model: Model, ids: np.ndarray) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= model.config.vocab_size):
        raise DataError(f"token id outside vocabulary of size {model.config.vocab_size}")
    if ids.shape[-1] > model.config.max_len:
        raise ShapeError(f"sequence of length {ids.shape[-1]} exceeds K={model.config.max_len}")


def encoder_forward(token_ids, model: Model, valid=None, rate: float = 0.0, rng=None) -> Tensor:
    """Encode tag-prefixed token ids into ``H_S``.

    ``token_ids`` is ``(k,)`` or ``(B, k)``; ``valid`` marks real positions
    (defaults to ids != pad). The output is ``(k, d)`` or ``(B, k, d)``.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
    _check_ids(model, ids)
    if valid is None:
        valid = ids != model.config.pad_id
    valid = np.atleast_2d(np.asarray(valid, dtype=bool))
    x = T.dropout(nn.embed_tokens(model.embedding, ids), rate, rng)
    for layer in model.encoder:
        x = nn.encoder_layer(x, valid, layer, rate, rng)
    h_s = nn.ln(x, model.enc_ln)
    if single:
        h_s = T.reshape(h_s, h_s.shape[1:])
    return h_s


def bridge(h_s: Tensor, src_valid: np.ndarray, src_languages: list[str], len_i: int | None,
           model: Model, rate: float = 0.0, rng=None):
    """Map encoder states to decoder memory.

    Returns ``(memory, memory_valid, activations)``. In mode ``none`` the memory
    is ``h_s`` itself and activations is None. Fixed modes ignore ``len_i``.
    """
    mode = model.config.mode
    if mode == "none":
        return h_s, src_valid, None
    if mode != "variable":
        len_i = model.config.interlingua.fixed_len
    elif len_i is None:
        raise ShapeError("variable mode needs an interlingua length")
    q = batch_queries(model.queries, src_languages, int(len_i))
    acts = interlingua_forward(h_s, src_valid, q, model.interlingua, model.intl_ln, rate, rng)
    valid = np.ones((h_s.shape[0], int(q.shape[1])), dtype=bool)
    return acts.h_i, valid, acts


def decoder_forward(h_i: Tensor, prefix_ids, model: Model, memory_valid=None,
                    prefix_valid=None, rate: float = 0.0, rng=None) -> Tensor:
    """Vocabulary logits for each prefix position, ``(|prefix|, V)`` or ``(B, |prefix|, V)``.

    The decoder sees the source only through ``h_i`` (interlingua rows, or
    encoder rows in mode ``none``); ``prefix_ids`` start with the target tag.
    """
    ids = np.asarray(prefix_ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
    if h_i.ndim == 2:
        h_i = T.reshape(h_i, (1,) + h_i.shape)
    if h_i.shape[1] == 0:
        raise ShapeError("decoder memory H_I is empty")
    _check_ids(model, ids)
    b, t = ids.shape
    if memory_valid is None:
        memory_valid = np.ones((b, h_i.shape[1]), dtype=bool)
    self_mask = nn.causal_mask(t)
    if prefix_valid is not None:
        self_mask = self_mask & np.asarray(prefix_valid, dtype=bool)[:, None, None, :]
    x = T.dropout(nn.embed_tokens(model.embedding, ids), rate, rng)
    for layer in model.decoder:
        x = nn.decoder_layer(x, h_i, self_mask, memory_valid, layer, rate, rng)
    x = nn.ln(x, model.dec_ln)
    logits = T.matmul(x, T.transpose(model.embedding, (1, 0)))
    if single:
        logits = T.reshape(logits, (t, model.config.vocab_size))
    return logits
