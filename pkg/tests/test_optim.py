import math

import numpy as np
import pytest

from varlen_interlingua.optim import AdamState, adam_step, warmup_inverse_sqrt
from varlen_interlingua.tensor import Tensor


def test_schedule_peaks_at_warmup():
    rates = [warmup_inverse_sqrt(s, 1e-3, 200) for s in range(1, 2001)]
    assert int(np.argmax(rates)) + 1 == 200
    assert rates[199] == pytest.approx(1e-3, abs=1e-18)


def test_schedule_shape():
    assert warmup_inverse_sqrt(0, 1e-3, 200) == 0.0
    assert warmup_inverse_sqrt(100, 1e-3, 200) == pytest.approx(5e-4)
    assert warmup_inverse_sqrt(800, 1e-3, 200) == pytest.approx(5e-4)
    assert warmup_inverse_sqrt(5, 1e-3, 0) == 1e-3


def test_zero_gradient_leaves_parameters():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    state = AdamState(warmup_steps=1)
    for _ in range(5):
        adam_step({"p": p}, state, {"p": np.zeros(3)})
    np.testing.assert_array_equal(p.data, [1.0, -2.0, 3.0])


def test_missing_gradient_counts_as_zero():
    p = Tensor(np.ones(2), requires_grad=True)
    adam_step({"p": p}, AdamState(warmup_steps=1))
    np.testing.assert_array_equal(p.data, np.ones(2))


def test_first_step_closed_form():
    # after bias correction m/sqrt(v) = g/|g|, so the first move is lr*sign(g)
    g = np.array([0.5, -4.0, 1e-3])
    p = Tensor(np.zeros(3), requires_grad=True)
    state = AdamState(base_lr=0.01, warmup_steps=1)
    lr = adam_step({"p": p}, state, {"p": g})
    assert lr == 0.01
    expected = -lr * g / (np.abs(g) + 1e-9)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12, atol=0)


def test_two_steps_against_manual_recursion():
    g1, g2 = np.array([1.0, -2.0]), np.array([3.0, 0.5])
    p = Tensor(np.zeros(2), requires_grad=True)
    state = AdamState(base_lr=1e-2, warmup_steps=4)
    adam_step({"p": p}, state, {"p": g1})
    adam_step({"p": p}, state, {"p": g2})
    b1, b2, eps = 0.9, 0.98, 1e-9
    x = np.zeros(2)
    m = v = np.zeros(2)
    for t, g in ((1, g1), (2, g2)):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        lr = 1e-2 * t / 4
        x = x - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    np.testing.assert_allclose(p.data, x, rtol=1e-14)


def test_minimises_quadratic():
    p = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    state = AdamState(base_lr=0.1, warmup_steps=1)
    for _ in range(500):
        adam_step({"p": p}, state, {"p": 2 * p.data})
    assert math.hypot(*p.data) < 0.05
