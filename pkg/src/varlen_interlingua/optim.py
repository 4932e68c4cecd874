"""Adam with linear warm-up followed by inverse-square-root decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


def warmup_inverse_sqrt(step: int, base_lr: float, warmup_steps: int) -> float:
    """Learning rate for 1-based ``step``; peaks at ``base_lr`` when ``step == warmup_steps``."""
    if step <= 0:
        return 0.0
    if warmup_steps <= 0:
        return base_lr
    if step <= warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * (warmup_steps / step) ** 0.5


@dataclass
class AdamState:
    base_lr: float = 1e-3
    warmup_steps: int = 200
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def lr(self, step: int | None = None) -> float:
        return warmup_inverse_sqrt(self.step if step is None else step,
                                   self.base_lr, self.warmup_steps)


def adam_step(params: dict[str, Tensor], state: AdamState,
              grads: dict[str, np.ndarray] | None = None) -> float:
    """Apply one bias-corrected Adam update in place; returns the rate used.

    ``grads`` defaults to each parameter's ``.grad``; parameters without a
    gradient are treated as having a zero gradient.
    """
    state.step += 1
    t = state.step
    lr = state.lr(t)
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        if g is None:
            m *= b1
            v *= b2
        else:
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return lr
