"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. Outside a ``with Tape():`` block nothing
is recorded, which is how inference runs.

    >>> w = Tensor([[1.0, 2.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    >>> backward(loss, tape)
    >>> w.grad
    array([[2., 4.]])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .errors import NumericError, ShapeError

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive applications; inputs always precede consumers."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: tuple, backward: Callable) -> None:
        out.node_id = len(self.nodes)
        out.requires_grad = True
        self.nodes.append(_Node(out, inputs, backward))

    def clear(self) -> None:
        for node in self.nodes:
            node.out.node_id = None
        self.nodes.clear()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # one reduction is much cheaper than an elementwise isfinite pass; a
    # non-finite sum is rechecked exactly so a plain overflow of the sum is not
    # mistaken for a bad value
    if not np.isfinite(np.add.reduce(arr, axis=None)) and not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by {op}")


def _make(data: np.ndarray, inputs: tuple, backward: Callable, op: str | None) -> Tensor:
    """Wrap ``data`` as an op output; ``op=None`` skips the finiteness check
    for pure data movement, which cannot create non-finite values."""
    if op is not None:
        _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.node_id = None
    out.name = None
    if _TAPES and any(t.requires_grad for t in inputs):
        _TAPES[-1].record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    """Elementwise product with broadcasting; ``b`` may be a python scalar."""
    a = as_tensor(a)
    if np.isscalar(b):
        c = float(b)
        return _make(a.data * c, (a,), lambda g: (g * c,), "mul")
    b = as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                 "mul")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    return _make(out, (x,), lambda g: (g * (out > 0),), "relu")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0 or ``rng`` is None.

    The drop decision compares 16-bit random integers with ``rate * 2**16``,
    which is about twice as fast as drawing floats; the realised rate is off
    by at most 2**-17.
    """
    if rate <= 0.0 or rng is None:
        return x
    cut = int(round(rate * 65536))
    bits = np.frombuffer(rng.bytes(2 * x.size), dtype=np.uint16).reshape(x.shape)
    keep = (bits >= cut) * (65536.0 / (65536 - cut))
    return _make(x.data * keep, (x,), lambda g: (g * keep,), None)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), None)


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),), None)


def getitem(x: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing; the gradient lands only on selected entries."""
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[idx] += g
        return (full,)

    return _make(np.ascontiguousarray(x.data[idx]), (x,), bw, None)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = tuple(xs)
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, cuts, axis=axis)), None)


def take(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` for integer ``ids`` of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"take expects a 2-D table, got shape {table.shape}")
    n, d = table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"row id out of range for table with {n} rows")

    def bw(g):
        full = np.zeros((n, d))
        K.scatter_add_rows(full, ids.reshape(-1), np.ascontiguousarray(g.reshape(-1, d)))
        return (full,)

    return _make(table.data[ids], (table,), bw, None)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def tsum(x: Tensor) -> Tensor:
    shape = x.shape
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape),), "sum")


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return _make(np.asarray(x.data.mean()), (x,),
                 lambda g: (np.broadcast_to(g / n, shape),), "mean")


# ---------------------------------------------------------------------------
# linear algebra and normalisation
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batching over leading axes.

    A 2-D right operand (a weight matrix) is applied to every row of ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    need_a, need_b = a.requires_grad, b.requires_grad
    if bd.ndim == 2 and ad.ndim > 2:
        lead = ad.shape[:-1]
        a2 = ad.reshape(-1, ad.shape[-1])
        out = (a2 @ bd).reshape(lead + (bd.shape[1],))

        def bw(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g @ bd.T if need_a else None, a2.T @ g2 if need_b else None)

        return _make(out, (a, b), bw, "matmul")

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if need_a else None
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape) if need_b else None
        return (ga, gb)

    return _make(np.matmul(ad, bd), (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ w + bias`` applied to every row of ``x`` (``w`` is 2-D)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or bias.shape != (w.shape[1],):
        raise ShapeError(f"linear shapes disagree: x {x.shape}, w {w.shape}, bias {bias.shape}")
    xd, wd = x.data, w.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd
    out += bias.data
    need_x = x.requires_grad

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape) if need_x else None
        return (gx, x2.T @ g2, g2.sum(axis=0))

    return _make(out.reshape(lead + (wd.shape[1],)), (x, w, bias), bw, "linear")


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Max-stabilised softmax along ``axis``.

    ``mask`` (boolean, broadcastable to ``x``) hides entries; hidden entries
    get probability exactly 0. A slice with nothing visible is an error.
    """
    x = as_tensor(x)
    axis = axis % x.ndim
    if x.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    moved = np.moveaxis(x.data, axis, -1)
    mshape = moved.shape
    x2 = np.ascontiguousarray(moved).reshape(-1, mshape[-1])
    m2 = None
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        m2 = np.ascontiguousarray(np.moveaxis(m, axis, -1)).reshape(-1, mshape[-1])
    y2 = K.softmax_rows(x2, m2)
    if m2 is not None and np.isnan(y2[:, 0]).any():
        raise ShapeError("no attendable positions: a softmax slice is fully masked")
    y = np.moveaxis(y2.reshape(mshape), -1, axis)

    def bw(g):
        g2 = np.ascontiguousarray(np.moveaxis(g, axis, -1)).reshape(-1, mshape[-1])
        gx = K.softmax_rows_backward(y2, g2)
        return (np.moveaxis(gx.reshape(mshape), -1, axis),)

    return _make(np.ascontiguousarray(y), (x,), bw, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row over the last axis, then apply ``gain`` and ``bias``."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({d},), got "
                         f"{gain.shape} and {bias.shape}")
    shape = x.shape
    x2 = x.data.reshape(-1, d)
    y2, xhat, rstd = K.layer_norm_rows(x2, gain.data, bias.data, eps)

    def bw(g):
        gx, gg, gb = K.layer_norm_rows_backward(
            np.ascontiguousarray(g.reshape(-1, d)), xhat, rstd, gain.data)
        return (gx.reshape(shape), gg, gb)

    return _make(y2.reshape(shape), (x, gain, bias), bw, "layer_norm")


def cross_entropy(logits: Tensor, targets, mask=None, smoothing: float = 0.0) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over unmasked positions.

    ``logits`` is ``(..., C)``; ``targets`` and ``mask`` match its leading axes.
    """
    c = logits.shape[-1]
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    lead = logits.shape[:-1]
    if targets.size != int(np.prod(lead)):
        raise ShapeError(f"{targets.size} targets for logits of shape {logits.shape}")
    m = (np.ones(targets.size, dtype=bool) if mask is None
         else np.asarray(mask, dtype=bool).reshape(-1))
    count = int(m.sum())
    if count == 0:
        raise ValueError("empty loss: every position is masked")
    live = targets[m]
    if live.min() < 0 or live.max() >= c:
        raise IndexError(f"target id out of range for {c} classes")
    z = np.ascontiguousarray(logits.data.reshape(-1, c))
    safe_t = np.where(m, targets, 0)
    total, probs = K.cross_entropy_rows(z, safe_t, m, smoothing)
    shape = logits.shape

    def bw(g):
        scale = float(g) / count
        return (K.cross_entropy_rows_backward(probs, safe_t, m, smoothing, scale).reshape(shape),)

    return _make(np.asarray(total / count), (logits,), bw, "cross_entropy")


def cosine_similarity(u: Tensor, v: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine along the last axis; vectors give a scalar, batches give ``(...)``."""
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape:
        raise ShapeError(f"cosine_similarity shapes differ: {u.shape} vs {v.shape}")
    ud, vd = u.data, v.data
    nu = np.sqrt((ud * ud).sum(axis=-1))
    nv = np.sqrt((vd * vd).sum(axis=-1))
    if (nu < eps).any():
        raise ValueError("cosine_similarity: argument u has (near-)zero norm")
    if (nv < eps).any():
        raise ValueError("cosine_similarity: argument v has (near-)zero norm")
    dot = (ud * vd).sum(axis=-1)
    cos = dot / (nu * nv)

    def bw(g):
        g = np.asarray(g)[..., None]
        nu_, nv_, c_ = nu[..., None], nv[..., None], cos[..., None]
        gu = g * (vd / (nu_ * nv_) - c_ * ud / (nu_ * nu_))
        gv = g * (ud / (nu_ * nv_) - c_ * vd / (nv_ * nv_))
        return (gu, gv)

    return _make(np.asarray(cos), (u, v), bw, "cosine_similarity")


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    Repeated calls add to existing leaf gradients; use :func:`zero_grad`
    between optimisation steps.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    nid = loss.node_id
    if nid is None or nid >= len(tape.nodes) or tape.nodes[nid].out is not loss:
        raise ValueError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {nid: np.ones_like(loss.data)}
    for i in range(nid, -1, -1):
        g = grads.pop(i, None)
        if g is None:
            continue
        node = tape.nodes[i]
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            j = t.node_id
            if j is not None and j < len(tape.nodes) and tape.nodes[j].out is t:
                prev = grads.get(j)
                grads[j] = gi if prev is None else prev + gi
            elif t.grad is None:
                t.grad = np.array(gi, dtype=np.float64).reshape(t.shape)
            else:
                t.grad += gi


def zero_grad(params) -> None:
    for p in params:
        p.grad = None
