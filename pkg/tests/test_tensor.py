"""Autodiff core: finite-difference oracles, softmax/attention contracts."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dip import tensor as T
from dip.gradcheck import finite_diff_check
from dip.params import ParamStore
from dip.tensor import NumericsError, Tensor, biased_attention, no_grad, softmax_rows


def check_op(build, shapes, seed=0, scale=1.0, shift=0.0, tol=1e-4):
    """Finite-difference check for `build(params...) -> scalar Tensor`."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    args = [
        store.add(f"p{i}", shift + scale * rng.standard_normal(s))
        for i, s in enumerate(shapes)
    ]
    err = finite_diff_check(lambda: build(*args), store)
    assert err <= tol, f"finite-diff mismatch: {err}"


# ---------------------------------------------------------------- elementwise ops


@pytest.mark.parametrize("seed", range(3))
def test_arithmetic_grads(seed):
    check_op(lambda a, b: ((a * b + a - b / (b * b + 2.0)) ** 2).sum(), [(5, 7), (5, 7)], seed)


def test_broadcast_grads():
    check_op(lambda a, b: (a * b).sum(), [(4, 1, 3), (2, 3)])
    check_op(lambda a, b: (a + b).mean(), [(6,), (5, 6)])


@pytest.mark.parametrize(
    "fn,shift",
    [
        (lambda a: a.exp().sum(), 0.0),
        (lambda a: a.log().sum(), 4.0),
        (lambda a: a.sqrt().sum(), 4.0),
        (lambda a: a.tanh().sum(), 0.0),
        (lambda a: a.gelu().sum(), 0.0),
        (lambda a: a.relu().sum(), 0.3),
        (lambda a: (a**3).sum(), 0.0),
    ],
)
def test_unary_grads(fn, shift):
    check_op(fn, [(6, 5)], shift=shift)


@pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False), (1, True), ((0, 1), False)])
def test_reduction_grads(axis, keepdims):
    check_op(lambda a: (a.sum(axis, keepdims) ** 2).sum(), [(4, 6)])
    check_op(lambda a: (a.mean(axis, keepdims) ** 2).sum(), [(4, 6)])


def test_max_reduce_grad():
    # distinct values keep the max subgradient unique
    rng = np.random.default_rng(5)
    vals = rng.permutation(30).astype(float).reshape(5, 6) * 0.37
    store = ParamStore()
    p = store.add("p", vals)
    err = finite_diff_check(lambda: (p.max(axis=1) ** 2).sum(), store)
    assert err <= 1e-4


def test_shape_op_grads():
    check_op(lambda a: (a.reshape(3, 8)[1:, 2:] ** 2).sum(), [(6, 4)])
    check_op(lambda a: (a.swapaxes(0, 1) @ a).sum(), [(4, 4)])
    check_op(lambda a: (a.transpose(2, 0, 1) ** 2).sum(), [(2, 3, 4)])
    check_op(lambda a, b: T.concat([a, b], axis=1).sum(axis=0).max(), [(3, 2), (3, 4)])
    check_op(lambda a, b: (T.stack([a, b], axis=0) ** 2).mean(), [(3, 2), (3, 2)])


def test_matmul_grads_batched():
    check_op(lambda a, b: (a @ b).sum(), [(3, 4, 5), (5, 2)])
    check_op(lambda a, b: ((a @ b) ** 2).mean(), [(2, 3, 4, 5), (2, 3, 5, 4)])


def test_matmul_rejects_vectors():
    with pytest.raises(NumericsError):
        Tensor(np.ones(3)) @ Tensor(np.ones((3, 2)))


def test_layer_norm_grad():
    def build(x, g, b):
        return (T.layer_norm(x, g, b) ** 2).sum()

    check_op(build, [(4, 7, 8), (8,), (8,)])


# ------------------------------------------------------------------- softmax


def test_softmax_symmetric_row():
    out = softmax_rows(Tensor([[0.0, 0.0]]))
    np.testing.assert_array_equal(out.data, [[0.5, 0.5]])


def test_softmax_extreme_row_stays_finite():
    out = softmax_rows(Tensor([[1000.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[1.0, 0.0]], atol=1e-300)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_softmax_rows_sum_to_one(seed):
    m = np.random.default_rng(seed).normal(scale=20.0, size=(5, 5))
    out = softmax_rows(Tensor(m))
    assert np.all(out.data >= 0)
    np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-9)


def test_softmax_rejects_non_rank2():
    with pytest.raises(NumericsError):
        softmax_rows(Tensor(np.zeros((2, 2, 2))))


def test_nan_input_rejected_at_construction():
    with pytest.raises(NumericsError):
        Tensor([[np.nan, 0.0]])
    with pytest.raises(NumericsError):
        Tensor([np.inf])


def test_softmax_grad():
    check_op(lambda a: (softmax_rows(a) ** 2).sum(), [(5, 5)], scale=2.0)


def test_softmax_row_sum_gradient_is_conserved():
    # row sums are identically 1, so d(sum softmax)/dp vanishes
    store = ParamStore()
    p = store.add("p", np.random.default_rng(0).normal(size=(4, 4)))
    loss = softmax_rows(p).sum()
    grads = store.gradients(loss)
    np.testing.assert_allclose(grads["p"], 0.0, atol=1e-12)


# ------------------------------------------------------------------- attention


def naive_attention(q, k, v, bias):
    """Three-loop reference for scaled dot-product attention."""
    n, e = q.shape
    m = k.shape[0]
    out = np.zeros((n, v.shape[1]))
    for i in range(n):
        scores = np.empty(m)
        for j in range(m):
            s = 0.0
            for d in range(e):
                s += q[i, d] * k[j, d]
            scores[j] = s / math.sqrt(e) + bias[i, j]
        w = np.exp(scores - scores.max())
        w /= w.sum()
        out[i] = w @ v
    return out


def test_attention_matches_naive_oracle():
    rng = np.random.default_rng(7)
    q, k, v = (rng.standard_normal((4, 8)) for _ in range(3))
    bias = rng.standard_normal((4, 4))
    got = biased_attention(Tensor(q), Tensor(k), Tensor(v), Tensor(bias))
    np.testing.assert_allclose(got.data, naive_attention(q, k, v, bias), atol=1e-12)


def test_attention_single_token_returns_value():
    q = k = Tensor([[1.0, 2.0]])
    v = Tensor([[3.0, -4.0]])
    out = biased_attention(q, k, v, Tensor([[0.0]]))
    np.testing.assert_array_equal(out.data, v.data)


def test_attention_bias_saturation_selects_row():
    rng = np.random.default_rng(1)
    q, k, v = (Tensor(rng.standard_normal((3, 4))) for _ in range(3))
    bias = np.full((3, 3), -1e6)
    bias[0, 2] = 1e6
    out = biased_attention(q, k, v, Tensor(bias))
    np.testing.assert_allclose(out.data[0], v.data[2], atol=1e-12)


def test_attention_zero_bias_bit_identical_to_omitted():
    rng = np.random.default_rng(2)
    q, k, v = (Tensor(rng.standard_normal((5, 6))) for _ in range(3))
    with_bias = biased_attention(q, k, v, Tensor(np.zeros((5, 5))))
    without = biased_attention(q, k, v, None)
    assert np.array_equal(with_bias.data, without.data)


def test_attention_shape_mismatch():
    with pytest.raises(NumericsError):
        biased_attention(Tensor(np.ones((3, 4))), Tensor(np.ones((3, 5))), Tensor(np.ones((3, 4))))
    with pytest.raises(NumericsError):
        biased_attention(
            Tensor(np.ones((3, 4))),
            Tensor(np.ones((3, 4))),
            Tensor(np.ones((3, 4))),
            Tensor(np.ones((2, 2))),
        )


def test_attention_grads():
    def build(q, k, v, b):
        return (biased_attention(q, k, v, b) ** 2).sum()

    check_op(build, [(4, 8), (4, 8), (4, 8), (4, 4)])


# ------------------------------------------------------------------ gradients API


def test_gradients_sum_is_ones_and_unreachable_zero():
    store = ParamStore()
    p = store.add("used", np.arange(6.0).reshape(2, 3))
    store.add("unused", np.ones(4))
    grads = store.gradients(p.sum())
    np.testing.assert_array_equal(grads["used"], np.ones((2, 3)))
    np.testing.assert_array_equal(grads["unused"], np.zeros(4))


def test_backward_requires_scalar():
    p = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(NumericsError):
        (p * 2).backward()


def test_backward_before_forward_is_an_error():
    with pytest.raises(NumericsError):
        Tensor(1.0).backward()


def test_no_grad_blocks_recording():
    p = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        out = (p * 2).sum()
    assert not out.requires_grad


def test_quadratic_loss_matches_exact_derivative():
    store = ParamStore()
    p = store.add("p", np.random.default_rng(3).normal(size=(4, 4)))
    err = finite_diff_check(lambda: (p**2).sum() * 0.5, store)
    assert err <= 1e-9


def test_finite_diff_rejects_bad_eps():
    store = ParamStore()
    store.add("p", np.ones(2))
    with pytest.raises(ValueError):
        finite_diff_check(lambda: store["p"].sum(), store, eps=0.0)


@pytest.mark.parametrize("seed", range(4))
def test_composed_ops_random_shapes(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 17))
    m = int(rng.integers(2, 17))

    def build(a, b):
        h = T.softmax_lastaxis(a @ b)
        return (h * (a @ b).tanh()).sum()

    check_op(build, [(n, m), (m, n)], seed=seed + 10)


# ------------------------------------------------------------------- ParamStore


def test_param_store_rejects_duplicates():
    store = ParamStore()
    store.add("w", np.ones(2))
    with pytest.raises(KeyError):
        store.add("w", np.ones(2))


def test_param_store_copy_is_independent():
    store = ParamStore()
    store.add("w", np.ones(3))
    dup = store.copy()
    dup["w"].data[0] = 99.0
    assert store["w"].data[0] == 1.0


def test_teacher_constants_never_reachable():
    student, teacher = ParamStore(), ParamStore()
    s = student.add("w", np.ones(3))
    t = teacher.add("w", np.full(3, 2.0))
    with no_grad():
        teacher_out = Tensor((t * 3).data)
    loss = (s * teacher_out).sum()
    student.gradients(loss)
    assert teacher["w"].grad is None
    np.testing.assert_array_equal(student.grad("w"), np.full(3, 6.0))
