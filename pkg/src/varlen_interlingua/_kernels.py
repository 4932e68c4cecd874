"""Row-wise numeric kernels with a numba path and a pure-numpy path.

Every kernel operates on 2-D float64 arrays (rows x features). The active
implementation is chosen at import time from the ``VLI_DISABLE_NUMBA``
environment variable and can be switched at runtime with :func:`set_backend`.
Both paths are deterministic; they agree to rounding, not bitwise.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_BACKEND = "numpy"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _np_softmax(x, mask):
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_backward(y, gy):
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def _np_layer_norm(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def _np_layer_norm_backward(gy, xhat, rstd, gain):
    gxhat = gy * gain
    n = xhat.shape[1]
    gx = (gxhat - gxhat.sum(axis=1, keepdims=True) / n
          - xhat * (gxhat * xhat).sum(axis=1, keepdims=True) / n)
    gx *= rstd[:, None]
    return gx, (gy * xhat).sum(axis=0), gy.sum(axis=0)


def _np_cross_entropy(logits, targets, mask, smoothing):
    rows = np.flatnonzero(mask)
    z = logits[rows]
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    logp = z - m - np.log(s)
    t = targets[rows]
    nll = -logp[np.arange(rows.size), t]
    if smoothing > 0.0:
        nll = (1.0 - smoothing) * nll - smoothing * logp.mean(axis=1)
    probs = np.zeros_like(logits)
    probs[rows] = e / s
    return float(nll.sum()), probs


def _np_cross_entropy_backward(probs, targets, mask, smoothing, scale):
    g = probs.copy()
    rows = np.flatnonzero(mask)
    c = probs.shape[1]
    if smoothing > 0.0:
        g[rows] -= smoothing / c
    g[rows, targets[rows]] -= 1.0 - smoothing
    g[~mask] = 0.0
    g *= scale
    return g


def _np_scatter_add_rows(out, ids, src):
    np.add.at(out, ids, src)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_softmax(x):
        n, c = x.shape
        out = np.empty_like(x)
        for i in range(n):
            m = x[i, 0]
            for j in range(1, c):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(c):
                e = np.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            inv = 1.0 / s
            for j in range(c):
                out[i, j] *= inv
        return out

    @njit(cache=True)
    def _nb_softmax_masked(x, mask):
        n, c = x.shape
        out = np.zeros_like(x)
        for i in range(n):
            m = -np.inf
            for j in range(c):
                if mask[i, j] and x[i, j] > m:
                    m = x[i, j]
            if m == -np.inf:
                for j in range(c):
                    out[i, j] = np.nan
                continue
            s = 0.0
            for j in range(c):
                if mask[i, j]:
                    e = np.exp(x[i, j] - m)
                    out[i, j] = e
                    s += e
            inv = 1.0 / s
            for j in range(c):
                out[i, j] *= inv
        return out

    @njit(cache=True)
    def _nb_softmax_backward(y, gy):
        n, c = y.shape
        gx = np.empty_like(y)
        for i in range(n):
            dot = 0.0
            for j in range(c):
                dot += gy[i, j] * y[i, j]
            for j in range(c):
                gx[i, j] = y[i, j] * (gy[i, j] - dot)
        return gx

    @njit(cache=True)
    def _nb_layer_norm(x, gain, bias, eps):
        n, c = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(n)
        for i in range(n):
            mean = 0.0
            for j in range(c):
                mean += x[i, j]
            mean /= c
            var = 0.0
            for j in range(c):
                d = x[i, j] - mean
                var += d * d
            var /= c
            r = 1.0 / np.sqrt(var + eps)
            rstd[i] = r
            for j in range(c):
                h = (x[i, j] - mean) * r
                xhat[i, j] = h
                y[i, j] = h * gain[j] + bias[j]
        return y, xhat, rstd

    @njit(cache=True)
    def _nb_layer_norm_backward(gy, xhat, rstd, gain):
        n, c = gy.shape
        gx = np.empty_like(gy)
        ggain = np.zeros(c)
        gbias = np.zeros(c)
        for i in range(n):
            s1 = 0.0
            s2 = 0.0
            for j in range(c):
                g = gy[i, j] * gain[j]
                s1 += g
                s2 += g * xhat[i, j]
                ggain[j] += gy[i, j] * xhat[i, j]
                gbias[j] += gy[i, j]
            s1 /= c
            s2 /= c
            r = rstd[i]
            for j in range(c):
                gx[i, j] = r * (gy[i, j] * gain[j] - s1 - xhat[i, j] * s2)
        return gx, ggain, gbias

    @njit(cache=True)
    def _nb_cross_entropy(logits, targets, mask, smoothing):
        n, c = logits.shape
        probs = np.zeros_like(logits)
        total = 0.0
        for i in range(n):
            if not mask[i]:
                continue
            m = logits[i, 0]
            for j in range(1, c):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(c):
                e = np.exp(logits[i, j] - m)
                probs[i, j] = e
                s += e
            lse = m + np.log(s)
            inv = 1.0 / s
            mean_logp = 0.0
            for j in range(c):
                probs[i, j] *= inv
                mean_logp += logits[i, j] - lse
            mean_logp /= c
            nll = lse - logits[i, targets[i]]
            total += (1.0 - smoothing) * nll - smoothing * mean_logp
        return total, probs

    @njit(cache=True)
    def _nb_cross_entropy_backward(probs, targets, mask, smoothing, scale):
        n, c = probs.shape
        g = np.zeros_like(probs)
        u = smoothing / c
        for i in range(n):
            if not mask[i]:
                continue
            for j in range(c):
                g[i, j] = (probs[i, j] - u) * scale
            g[i, targets[i]] -= (1.0 - smoothing) * scale
        return g

    @njit(cache=True)
    def _nb_scatter_add_rows(out, ids, src):
        n, c = src.shape
        for i in range(n):
            r = ids[i]
            for j in range(c):
                out[r, j] += src[i, j]


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def set_backend(name: str) -> None:
    """Select ``"numba"`` or ``"numpy"`` kernels for subsequent calls."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    _BACKEND = name


def get_backend() -> str:
    return _BACKEND


def softmax_rows(x, mask=None):
    """Softmax over axis 1. Rows whose mask is all False come back as NaN."""
    if _BACKEND == "numba":
        if mask is None:
            return _nb_softmax(x)
        return _nb_softmax_masked(x, mask)
    if mask is not None:
        dead = ~mask.any(axis=1)
        if dead.any():
            out = np.zeros_like(x)
            live = ~dead
            out[live] = _np_softmax(x[live], mask[live])
            out[dead] = np.nan
            return out
    return _np_softmax(x, mask)


def softmax_rows_backward(y, gy):
    if _BACKEND == "numba":
        return _nb_softmax_backward(y, gy)
    return _np_softmax_backward(y, gy)


def layer_norm_rows(x, gain, bias, eps):
    """Returns ``(y, xhat, rstd)``; the last two feed the backward kernel."""
    if _BACKEND == "numba":
        return _nb_layer_norm(x, gain, bias, eps)
    return _np_layer_norm(x, gain, bias, eps)


def layer_norm_rows_backward(gy, xhat, rstd, gain):
    if _BACKEND == "numba":
        return _nb_layer_norm_backward(gy, xhat, rstd, gain)
    return _np_layer_norm_backward(gy, xhat, rstd, gain)


def cross_entropy_rows(logits, targets, mask, smoothing=0.0):
    """Summed (not averaged) negative log-likelihood over rows with ``mask``."""
    if _BACKEND == "numba":
        return _nb_cross_entropy(logits, targets, mask, smoothing)
    return _np_cross_entropy(logits, targets, mask, smoothing)


def cross_entropy_rows_backward(probs, targets, mask, smoothing, scale):
    if _BACKEND == "numba":
        return _nb_cross_entropy_backward(probs, targets, mask, smoothing, scale)
    return _np_cross_entropy_backward(probs, targets, mask, smoothing, scale)


def scatter_add_rows(out, ids, src):
    """``out[ids[i]] += src[i]`` with repeated ids accumulating, in place."""
    if _BACKEND == "numba":
        _nb_scatter_add_rows(out, ids, src)
    else:
        _np_scatter_add_rows(out, ids, src)


if HAVE_NUMBA and os.environ.get("VLI_DISABLE_NUMBA", "").lower() not in ("1", "true", "yes"):
    _BACKEND = "numba"
