"""Numeric core: op contracts and finite-difference gradient checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from readmit import tensor as T
from readmit.tensor import ShapeError, Tensor, grad_check


def leaf(data):
    t = Tensor(np.asarray(data, dtype=float))
    t.requires_grad = True
    return t


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    m = np.array([[2.0, -1.0], [0.5, 3.0]])
    out = T.matmul(Tensor(np.eye(2)), Tensor(m))
    np.testing.assert_array_equal(out.data, m)


def test_matmul_forced_case():
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[2.0], [4.0]])


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match="3x4.*5x2"):
        T.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5, 2))))


def test_matmul_gradient_finite_difference():
    rng = np.random.default_rng(0)
    b_data = rng.normal(size=(4, 2))

    a = leaf(rng.normal(size=(3, 4)))
    err_a = grad_check(lambda x: T.matmul(x, Tensor(b_data)).sum(), a)
    assert err_a < 1e-6

    b = leaf(b_data)
    a_data = rng.normal(size=(3, 4))
    err_b = grad_check(lambda x: T.matmul(Tensor(a_data), x).sum(), b)
    assert err_b < 1e-6


def test_matmul_batched_gradients():
    rng = np.random.default_rng(1)
    w = leaf(rng.normal(size=(4, 3)))
    x_data = rng.normal(size=(2, 5, 4))
    # shared weight over a batched left operand: gradient sums over the batch
    assert grad_check(lambda p: T.matmul(Tensor(x_data), p).sum(), w) < 1e-6
    x = leaf(x_data)
    y_data = rng.normal(size=(2, 4, 3))
    assert grad_check(lambda p: T.matmul(p, Tensor(y_data)).sum(), x) < 1e-6


# ---------------------------------------------------------------------------
# softmax


def test_softmax_symmetry():
    out = T.softmax(Tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.data, [0.5, 0.5], atol=1e-15)


def test_softmax_analytic_case():
    out = T.softmax(Tensor([math.log(1.0), math.log(2.0)]))
    np.testing.assert_allclose(out.data, [1.0 / 3.0, 2.0 / 3.0], atol=1e-14)


@settings(max_examples=50)
@given(
    vals=st.lists(st.floats(-30, 30), min_size=1, max_size=8),
    shift=st.floats(-100, 100),
)
def test_softmax_shift_invariance(vals, shift):
    v = np.array(vals)
    a = T.softmax(Tensor(v)).data
    b = T.softmax(Tensor(v + shift)).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(2)
    out = T.softmax(Tensor(rng.normal(size=(5, 7)) * 10), axis=-1)
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(5), atol=1e-12)
    assert (out.data >= 0).all()


def test_softmax_empty_axis_errors():
    with pytest.raises(ShapeError):
        T.softmax(Tensor(np.zeros((3, 0))))


def test_softmax_gradient():
    x = leaf(np.random.default_rng(3).normal(size=(2, 5)))
    weights = np.random.default_rng(4).normal(size=(2, 5))
    fn = lambda t: T.mul_const(T.softmax(t, axis=-1), weights).sum()
    assert grad_check(fn, x) < 1e-6


# ---------------------------------------------------------------------------
# sigmoid


def test_sigmoid_zero():
    assert T.sigmoid(Tensor([0.0])).data[0] == 0.5


def test_sigmoid_ln3():
    np.testing.assert_allclose(T.sigmoid(Tensor([math.log(3.0)])).data[0], 0.75, atol=1e-15)


def test_sigmoid_saturation_no_nan():
    val = T.sigmoid(Tensor([-100.0])).data[0]
    assert 0.0 < val <= 1e-30
    assert np.isfinite(T.sigmoid(Tensor([1000.0, -1000.0])).data).all()


def test_sigmoid_range_and_gradient():
    rng = np.random.default_rng(5)
    x = leaf(rng.normal(size=12) * 3)
    out = T.sigmoid(Tensor(x.data))
    assert ((out.data > 0) & (out.data < 1)).all()
    assert grad_check(lambda t: T.sigmoid(t).sum(), x) < 1e-6


# ---------------------------------------------------------------------------
# layer_norm


def test_layer_norm_constant_row():
    g = leaf(np.ones(3))
    b = leaf(np.zeros(3))
    out = T.layer_norm(Tensor([[5.0, 5.0, 5.0]]), g, b)
    np.testing.assert_allclose(out.data, [[0.0, 0.0, 0.0]], atol=1e-12)


def test_layer_norm_already_normalized():
    g = leaf(np.ones(2))
    b = leaf(np.zeros(2))
    out = T.layer_norm(Tensor([[1.0, -1.0]]), g, b, eps=1e-12)
    np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-6)


def test_layer_norm_empty_axis_errors():
    g = leaf(np.ones(3))
    with pytest.raises(ShapeError):
        T.layer_norm(Tensor(np.zeros((2, 0))), g, g)


def test_layer_norm_gradient():
    rng = np.random.default_rng(6)
    gain = Tensor(rng.normal(size=5))
    bias = Tensor(rng.normal(size=5))
    weights = rng.normal(size=(3, 5))
    x = leaf(rng.normal(size=(3, 5)))
    fn = lambda t: T.mul_const(T.layer_norm(t, gain, bias), weights).sum()
    assert grad_check(fn, x) < 1e-5

    g = leaf(rng.normal(size=5))
    x_const = Tensor(rng.normal(size=(3, 5)))
    fn_g = lambda t: T.mul_const(T.layer_norm(x_const, t, bias), weights).sum()
    assert grad_check(fn_g, g) < 1e-5


# ---------------------------------------------------------------------------
# backward semantics


def test_backward_sum_gives_ones():
    x = leaf([1.0, 2.0, 3.0])
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])


def test_backward_elementwise_square():
    x = leaf([1.0, 2.0])
    T.mul(x, x).sum().backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0], atol=1e-15)


def test_backward_requires_scalar():
    x = leaf([[1.0, 2.0]])
    with pytest.raises(ValueError, match="scalar"):
        x.backward()


def test_backward_accumulates_without_reset():
    x = leaf([1.0, 2.0])
    x.sum().backward()
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])
    x.zero_grad()
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])


def test_backward_composite_attention_layer():
    """Scalar loss through a hand-built single-head attention block."""
    rng = np.random.default_rng(7)
    d = 4
    wq, wk, wv = (Tensor(rng.normal(size=(d, d))) for _ in range(3))

    def attention_loss(x):
        q = T.matmul(x, wq)
        k = T.matmul(x, wk)
        v = T.matmul(x, wv)
        scores = T.scale(T.matmul(q, T.transpose_last2(k)), 1.0 / math.sqrt(d))
        att = T.matmul(T.softmax(scores, axis=-1), v)
        return T.mul(att, att).mean()

    x = leaf(rng.normal(size=(5, d)))
    assert grad_check(attention_loss, x) < 1e-4


# ---------------------------------------------------------------------------
# grad_check itself


def test_grad_check_linear_is_exact():
    w = np.array([0.3, -1.2, 2.0])
    x = leaf([1.0, 1.0, 1.0])
    err = grad_check(lambda t: T.mul_const(t, w).sum(), x)
    assert err < 1e-8


def test_grad_check_sigmoid_dot():
    rng = np.random.default_rng(8)
    w = rng.normal(size=6)
    x = leaf(rng.normal(size=6))
    err = grad_check(lambda t: T.sigmoid(T.mul_const(t, w).sum()), x)
    assert err < 1e-6


def test_grad_check_rejects_bad_eps():
    with pytest.raises(ValueError):
        grad_check(lambda t: t.sum(), leaf([1.0]), eps=0.0)


# ---------------------------------------------------------------------------
# remaining ops


def test_elementwise_gradients():
    rng = np.random.default_rng(9)
    for fn in (T.texp, T.tanh, T.gelu, T.relu, lambda t: T.pow_const(t, 3.0)):
        x = leaf(rng.normal(size=7) + 2.5)  # keep relu away from the kink
        assert grad_check(lambda t: fn(t).sum(), x) < 1e-6


def test_log_gradient():
    x = leaf(np.array([0.5, 1.5, 4.0]))
    assert grad_check(lambda t: T.tlog(t).sum(), x) < 1e-6


def test_add_bias_broadcast_over_rows():
    b = leaf(np.array([1.0, 2.0]))
    x = Tensor(np.zeros((3, 2)))
    out = T.add(x, b)
    np.testing.assert_array_equal(out.data, np.tile([1.0, 2.0], (3, 1)))
    assert grad_check(lambda t: T.add(x, t).sum(), b) < 1e-8


def test_add_rejects_general_broadcast():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 1))))


def test_slice_and_concat_roundtrip():
    rng = np.random.default_rng(10)
    x = leaf(rng.normal(size=(2, 3, 6)))
    w = rng.normal(size=(2, 3, 6))

    def fn(t):
        parts = [T.slice_last(t, 0, 2), T.slice_last(t, 2, 6)]
        return T.mul_const(T.concat(parts, axis=-1), w).sum()

    assert grad_check(fn, x) < 1e-6


def test_slice_steps_gradient():
    rng = np.random.default_rng(11)
    x = leaf(rng.normal(size=(2, 4, 3)))
    fn = lambda t: T.slice_steps(t, 1, 3).sum()
    assert grad_check(fn, x) < 1e-8


def test_transpose_and_reshape_gradient():
    rng = np.random.default_rng(12)
    x = leaf(rng.normal(size=(2, 3, 4)))
    w = rng.normal(size=(2, 4, 3))
    fn = lambda t: T.mul_const(T.transpose_last2(t), w).sum()
    assert grad_check(fn, x) < 1e-8


def test_bce_with_logits_matches_naive_formula():
    rng = np.random.default_rng(13)
    z = rng.normal(size=50) * 3
    t = rng.random(50)
    out = T.bce_with_logits(Tensor(z), t)
    p = 1.0 / (1.0 + np.exp(-z))
    naive = -(t * np.log(p) + (1 - t) * np.log(1 - p))
    np.testing.assert_allclose(out.data, naive, atol=1e-12)


def test_bce_with_logits_gradient():
    rng = np.random.default_rng(14)
    t = rng.integers(0, 2, size=10).astype(float)
    z = leaf(rng.normal(size=10))
    assert grad_check(lambda u: T.bce_with_logits(u, t).mean(), z) < 1e-6


def test_dropout_eval_identity_and_scaling():
    rng = np.random.default_rng(15)
    x = Tensor(np.ones((200, 50)))
    out = T.dropout(x, 0.5, rng)
    kept = out.data[out.data > 0]
    assert np.allclose(kept, 2.0)           # inverted scaling
    assert abs(out.data.mean() - 1.0) < 0.05
    same = T.dropout(x, 0.0, rng)
    assert same is x


def test_forward_deterministic():
    rng = np.random.default_rng(16)
    x = Tensor(rng.normal(size=(4, 4)))
    a = T.softmax(T.matmul(x, x), axis=-1).data
    b = T.softmax(T.matmul(x, x), axis=-1).data
    np.testing.assert_array_equal(a, b)


def test_forward_outputs_finite_on_finite_inputs():
    rng = np.random.default_rng(17)
    x = Tensor(rng.normal(size=(3, 8)) * 50)
    g = Tensor(np.ones(8))
    b = Tensor(np.zeros(8))
    for out in (T.softmax(x, axis=-1), T.sigmoid(x), T.layer_norm(x, g, b),
                T.gelu(x), T.add_const(x, np.full((3, 8), T.MASK_NEG))):
        assert np.isfinite(out.data).all()
