"""Binary checkpoint format.

Layout (all integers little-endian)::

    magic        8 bytes  b"VLICKPT\\x00"
    version      u32      FORMAT_VERSION
    fingerprint  32 bytes sha256 of the model config JSON (sorted keys)
    n_blocks     u32
    blocks       n_blocks x block

    block:
      name_len u16, name (utf-8), kind u8
      kind 0 (array): ndim u8, ndim x u32 dims, prod(dims) x float64 LE
      kind 1 (json):  length u32, utf-8 JSON

Block names: ``meta`` (json), ``param/<name>``, ``adam.m/<name>``,
``adam.v/<name>``. Loading rejects a fingerprint that does not match the
config stored in ``meta``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import Model, ModelConfig, init_model
from .optim import AdamState

MAGIC = b"VLICKPT\x00"
FORMAT_VERSION = 1


def _digest(config: ModelConfig) -> bytes:
    return hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode()).digest()


def _array_block(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode()
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", 0, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _json_block(name: str, obj) -> bytes:
    nb = name.encode()
    body = json.dumps(obj, sort_keys=True).encode()
    return struct.pack("<H", len(nb)) + nb + struct.pack("<BI", 1, len(body)) + body


def save_checkpoint(path, model: Model, state: AdamState | None = None, epoch: int = 0,
                    valid_l_nmt: float | None = None, extra: dict | None = None) -> Path:
    meta = {"config": model.config.to_dict(), "epoch": epoch, "valid_l_nmt": valid_l_nmt,
            "format_version": FORMAT_VERSION, "extra": extra or {}}
    blocks = []
    params = model.parameters()
    for name, p in params.items():
        blocks.append(_array_block(f"param/{name}", p.data))
    if state is not None:
        meta["adam"] = {"base_lr": state.base_lr, "warmup_steps": state.warmup_steps,
                        "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps,
                        "step": state.step}
        for name in params:
            if name in state.m:
                blocks.append(_array_block(f"adam.m/{name}", state.m[name]))
                blocks.append(_array_block(f"adam.v/{name}", state.v[name]))
    blocks.insert(0, _json_block("meta", meta))
    out = MAGIC + struct.pack("<I", FORMAT_VERSION) + _digest(model.config)
    out += struct.pack("<I", len(blocks)) + b"".join(blocks)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(out)
    tmp.replace(path)
    return path


def _read_blocks(buf: bytes):
    if buf[:8] != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    fingerprint = buf[12:44]
    (n,) = struct.unpack_from("<I", buf, 44)
    pos = 48
    blocks = {}
    for _ in range(n):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        kind = buf[pos]
        pos += 1
        if kind == 0:
            ndim = buf[pos]
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            count = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64)
            pos += 8 * count
            blocks[name] = arr.reshape(dims)
        elif kind == 1:
            (blen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            blocks[name] = json.loads(buf[pos:pos + blen].decode())
            pos += blen
        else:
            raise DataError(f"unknown block kind {kind} in checkpoint")
    return fingerprint, blocks


def load_checkpoint(path) -> tuple[Model, AdamState | None, dict]:
    """Rebuild the model (and optimizer state, if stored); returns ``(model, state, meta)``."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    fingerprint, blocks = _read_blocks(buf)
    meta = blocks.get("meta")
    if meta is None:
        raise DataError("checkpoint has no meta block")
    config = ModelConfig.from_dict(meta["config"])
    if _digest(config) != fingerprint:
        raise DataError("checkpoint config fingerprint mismatch")
    model = init_model(config, seed=0)
    for name, p in model.parameters().items():
        arr = blocks.get(f"param/{name}")
        if arr is None or arr.shape != p.shape:
            raise DataError(f"checkpoint parameter {name} missing or misshapen")
        p.data[...] = arr
    state = None
    if "adam" in meta:
        state = AdamState(**meta["adam"])
        for name in model.parameters():
            if f"adam.m/{name}" in blocks:
                state.m[name] = blocks[f"adam.m/{name}"].copy()
                state.v[name] = blocks[f"adam.v/{name}"].copy()
    return model, state, meta
