import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from varlen_interlingua import _kernels as K
from varlen_interlingua import tensor as T
from varlen_interlingua.errors import NumericError, ShapeError
from varlen_interlingua.tensor import Tape, Tensor, backward

from gradcheck import PRIMITIVES, run_case


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestMatmul:
    def test_identity(self, rng):
        a = rng.normal(size=(2, 2))
        np.testing.assert_array_equal(T.matmul(Tensor(a), Tensor(np.eye(2))).data, a)

    def test_hand_example_matches_triple_loop(self):
        a, b = np.array([[1.0, 2], [3, 4]]), np.array([[5.0], [6]])
        out = T.matmul(Tensor(a), Tensor(b)).data
        np.testing.assert_array_equal(out, naive_matmul(a, b))
        np.testing.assert_array_equal(out, [[17.0], [39.0]])

    def test_zero_annihilates(self, rng):
        out = T.matmul(Tensor(rng.normal(size=(3, 4))), Tensor(np.zeros((4, 2)))).data
        np.testing.assert_array_equal(out, np.zeros((3, 2)))

    def test_random_against_loops(self, rng):
        a, b = rng.normal(size=(3, 5)), rng.normal(size=(5, 4))
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b),
                                   rtol=1e-13, atol=1e-13)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 1\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 1))))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(Tensor(np.full(4, 3.0))).data, [0.25] * 4,
                                   rtol=0, atol=1e-15)

    def test_single_entry(self):
        assert T.softmax(Tensor([7.5])).data.tolist() == [1.0]

    def test_closed_form(self):
        out = T.softmax(Tensor([0.0, math.log(2.0)])).data
        np.testing.assert_allclose(out, [1 / 3, 2 / 3], rtol=0, atol=1e-15)

    def test_stable_for_huge_inputs(self):
        out = T.softmax(Tensor([1000.0, 1000.0])).data
        np.testing.assert_allclose(out, [0.5, 0.5])

    def test_empty_axis(self):
        with pytest.raises(ShapeError, match="empty"):
            T.softmax(Tensor(np.zeros((2, 0))))

    def test_fully_masked_row(self):
        with pytest.raises(ShapeError, match="no attendable positions"):
            T.softmax(Tensor(np.zeros((2, 3))), mask=np.array([[True, False, False],
                                                                [False, False, False]]))

    def test_masked_entries_are_exactly_zero(self):
        out = T.softmax(Tensor([1.0, 2.0, 3.0]), mask=np.array([True, False, True])).data
        assert out[1] == 0.0
        assert abs(out.sum() - 1.0) < 1e-15

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
                  elements=st.floats(-50, 50)))
    def test_rows_sum_to_one_and_positive(self, x):
        for backend in ("numba", "numpy"):
            K.set_backend(backend)
            y = T.softmax(Tensor(x)).data
            assert np.all(y > 0)
            np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
        K.set_backend("numba")


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        out = T.layer_norm(Tensor(np.full((1, 4), 2.5)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, np.zeros((1, 4)))

    def test_closed_form(self):
        out = T.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                           eps=1e-14)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], rtol=0, atol=1e-12)

    def test_zero_gain_gives_bias(self, rng):
        bias = rng.normal(size=5)
        out = T.layer_norm(Tensor(rng.normal(size=(3, 5))), Tensor(np.zeros(5)), Tensor(bias))
        np.testing.assert_array_equal(out.data, np.broadcast_to(bias, (3, 5)))

    def test_rows_standardised(self, rng):
        out = T.layer_norm(Tensor(rng.normal(3, 4, size=(6, 16))), Tensor(np.ones(16)),
                           Tensor(np.zeros(16)), eps=1e-12).data
        np.testing.assert_allclose(out.mean(axis=1), 0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=1), 1, atol=1e-9)

    def test_gain_shape_checked(self):
        with pytest.raises(ShapeError):
            T.layer_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(2)), Tensor(np.zeros(3)))


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = T.cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 3])
        assert abs(loss.item() - math.log(4)) < 1e-15

    def test_margin_drives_loss_to_zero(self):
        losses = []
        for margin in (1.0, 10.0, 100.0):
            z = np.zeros((2, 3))
            z[0, 1] = z[1, 2] = margin
            losses.append(T.cross_entropy(Tensor(z), [1, 2]).item())
        assert losses[0] > losses[1] > losses[2]
        assert losses[2] < 1e-40

    def test_mask_excludes_positions(self):
        z = np.array([[0.0, 0.0], [5.0, -5.0]])
        loss = T.cross_entropy(Tensor(z), [0, 1], mask=[True, False])
        assert abs(loss.item() - math.log(2)) < 1e-15

    def test_all_masked(self):
        with pytest.raises(ValueError, match="empty loss"):
            T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 1], mask=[False, False])

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])

    def test_masked_target_may_be_anything(self):
        T.cross_entropy(Tensor(np.zeros((2, 3))), [0, 99], mask=[True, False])


class TestCosine:
    def test_equal(self):
        assert abs(T.cosine_similarity(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).item() - 1) < 1e-15

    def test_orthogonal(self):
        assert T.cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 3.0])).item() == 0.0

    def test_closed_form(self):
        c = T.cosine_similarity(Tensor([1.0, 0.0]), Tensor([1.0, 1.0])).item()
        assert abs(c - 1 / math.sqrt(2)) < 1e-15

    @pytest.mark.parametrize("which", ["u", "v"])
    def test_zero_norm_names_argument(self, which):
        good, bad = Tensor([1.0, 1.0]), Tensor([0.0, 0.0])
        args = (bad, good) if which == "u" else (good, bad)
        with pytest.raises(ValueError, match=f"argument {which}"):
            T.cosine_similarity(*args)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (2, 5), elements=st.floats(-10, 10)))
    def test_range(self, x):
        if np.linalg.norm(x[0]) < 1e-6 or np.linalg.norm(x[1]) < 1e-6:
            return
        c = T.cosine_similarity(Tensor(x[0]), Tensor(x[1])).item()
        assert -1 - 1e-12 <= c <= 1 + 1e-12


class TestBackward:
    def test_sum_gives_ones(self, rng):
        a = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        with Tape() as tape:
            loss = a.sum()
        backward(loss, tape)
        np.testing.assert_array_equal(a.grad, np.ones((3, 2)))

    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        with Tape() as tape:
            loss = x * x
        backward(loss, tape)
        assert x.grad == 6.0

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(ShapeError, match="scalar"):
            backward(y, tape)

    def test_loss_not_on_tape(self):
        x = Tensor(1.0, requires_grad=True)
        with Tape():
            y = x * 2.0
        with pytest.raises(ValueError, match="not recorded"):
            backward(y, Tape())

    def test_accumulates_until_reset(self):
        x = Tensor(2.0, requires_grad=True)
        with Tape() as tape:
            loss = x * x
        backward(loss, tape)
        backward(loss, tape)
        assert x.grad == 8.0
        T.zero_grad([x])
        backward(loss, tape)
        assert x.grad == 4.0

    def test_repeat_with_reset_is_identical(self, rng):
        w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=(5, 4)))
        with Tape() as tape:
            loss = T.cross_entropy(T.matmul(x, w), [0, 1, 2, 0, 1])
        backward(loss, tape)
        first = w.grad.copy()
        T.zero_grad([w])
        backward(loss, tape)
        np.testing.assert_array_equal(first, w.grad)

    def test_tape_is_topological(self, rng):
        a = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        with Tape() as tape:
            b = T.matmul(a, a)
            c = T.relu(b) + a
            _ = T.layer_norm(c, Tensor(np.ones(2)), Tensor(np.zeros(2))).sum()
        ids = {id(n.out): i for i, n in enumerate(tape.nodes)}
        for i, node in enumerate(tape.nodes):
            for inp in node.inputs:
                if id(inp) in ids:
                    assert ids[id(inp)] < i

    def test_nothing_recorded_outside_tape(self):
        x = Tensor(1.0, requires_grad=True)
        y = x * 3.0
        assert y.node_id is None

    def test_non_finite_raises(self):
        with pytest.raises(NumericError):
            Tensor([1e308]) * 10.0
        with pytest.raises(NumericError):
            T.matmul(Tensor([[np.nan]]), Tensor([[1.0]]))


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name, backend):
    assert run_case(PRIMITIVES[name], instances=5, seed=11) < 1e-4


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 7)),
              elements=st.floats(-20, 20)),
       st.floats(0, 0.3))
def test_backends_agree(x, smoothing):
    mask = np.ones(x.shape, dtype=bool)
    mask[:, -1] = x.shape[1] == 1
    targets = np.zeros(x.shape[0], dtype=np.int64)
    gain, bias = np.linspace(0.5, 1.5, x.shape[1]), np.linspace(-1, 1, x.shape[1])
    out = {}
    for backend in ("numba", "numpy"):
        K.set_backend(backend)
        sm = K.softmax_rows(x, mask)
        ln, xhat, rstd = K.layer_norm_rows(x, gain, bias, 1e-5)
        lng = K.layer_norm_rows_backward(x, xhat, rstd, gain)
        ce, probs = K.cross_entropy_rows(x, targets, np.ones(x.shape[0], bool), smoothing)
        ceg = K.cross_entropy_rows_backward(probs, targets, np.ones(x.shape[0], bool),
                                            smoothing, 0.5)
        out[backend] = [sm, K.softmax_rows_backward(sm, x), ln, *lng, np.array(ce), ceg]
    K.set_backend("numba")
    for a, b in zip(out["numba"], out["numpy"]):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_scatter_add_backends_agree(rng):
    ids = rng.integers(0, 5, size=30)
    src = rng.normal(size=(30, 3))
    res = []
    for backend in ("numba", "numpy"):
        K.set_backend(backend)
        out = np.zeros((5, 3))
        K.scatter_add_rows(out, ids, src)
        res.append(out)
    K.set_backend("numba")
    np.testing.assert_allclose(res[0], res[1], rtol=1e-13, atol=1e-13)


def test_unknown_backend():
    with pytest.raises(ValueError):
        K.set_backend("cuda")
