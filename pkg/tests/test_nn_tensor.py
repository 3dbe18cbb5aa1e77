"""Autodiff core: op semantics, gradient checks for every primitive, Adam."""

import numpy as np
import pytest

from conftest import finite_difference_check
from trajkit.errors import NotScalar, ShapeMismatch
from trajkit.nn import tensor as T
from trajkit.nn.optim import Adam
from trajkit.nn.tensor import Tensor


def leaf(data):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


# --- forward semantics -----------------------------------------------------------


def test_softmax_symmetry():
    out = T.softmax(Tensor([[0.0, 0.0, 0.0]]), axis=1)
    np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)


def test_softplus_closed_form():
    assert abs(T.softplus(Tensor(0.0)).item() - np.log(2.0)) < 1e-12


def test_smooth_l1_zero_residual():
    pred = leaf([[1.0, -2.0], [0.3, 4.0]])
    out = T.smooth_l1(pred, pred.data.copy())
    assert float(np.abs(out.data).max()) == 0.0


def test_overflow_safe_activations():
    big = Tensor(np.array([[800.0, -800.0]]))
    for op in (T.sigmoid, T.softplus, T.tanh):
        assert np.all(np.isfinite(op(big).data))
    assert np.all(np.isfinite(T.softmax(big, axis=1).data))


def test_shape_mismatch_raises():
    with pytest.raises(ShapeMismatch):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeMismatch):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 3))))


def test_backward_requires_scalar():
    t = leaf(np.ones((2, 2)))
    with pytest.raises(NotScalar):
        (t + t).backward()


def test_repeated_backward_accumulates():
    w = leaf(np.array([[1.0, 2.0]]))
    loss = (w * w).sum()
    loss.backward()
    first = w.grad.copy()
    loss.backward()
    np.testing.assert_allclose(w.grad, 2.0 * first)


def test_linear_map_gradient_structure():
    # loss = sum(W x): dL/dW = x broadcast over output rows
    w = leaf(np.random.default_rng(0).normal(size=(3, 4)))
    x = np.random.default_rng(1).normal(size=(5, 3))
    loss = T.matmul(Tensor(x), w).sum()
    loss.backward()
    np.testing.assert_allclose(w.grad, np.tile(x.sum(axis=0)[:, None], (1, 4)))


def test_dropout_semantics(rng):
    x = leaf(np.ones((4, 6)))
    assert T.dropout(x, 0.5, train=False, rng=rng) is x
    assert T.dropout(x, 0.0, train=True, rng=rng) is x
    out = T.dropout(x, 0.5, train=True, rng=np.random.default_rng(0))
    kept = out.data != 0.0
    np.testing.assert_allclose(out.data[kept], 2.0)  # inverted scaling


def test_no_grad_suppresses_tape():
    x = leaf(np.ones((2, 2)))
    with T.no_grad():
        out = (x * x).sum()
    assert out._parents == ()


# --- gradient checks: every primitive ----------------------------------------------

UNARY_OPS = [T.relu, T.sigmoid, T.softplus, T.tanh, T.exp,
             lambda t: T.softmax(t, axis=1), lambda t: T.pow_scalar(t, 3.0),
             T.neg, T.transpose]


@pytest.mark.parametrize("op_idx", range(len(UNARY_OPS)))
def test_grad_unary_ops(op_idx, rng):
    op = UNARY_OPS[op_idx]
    for _ in range(20):
        x = leaf(rng.normal(size=(3, 4)))
        x.data[np.abs(x.data) < 1e-3] += 0.01  # stay away from relu kink
        finite_difference_check(lambda: op(x).mean(), [x])


def test_grad_log(rng):
    for _ in range(20):
        x = leaf(rng.uniform(0.5, 3.0, size=(3, 4)))
        finite_difference_check(lambda: T.log(x).mean(), [x])


@pytest.mark.parametrize("shapes", [
    ((3, 4), (3, 4)),
    ((3, 4), (4,)),   # row broadcast
    ((3, 4), (3, 1)),  # column broadcast
    ((3, 4), ()),     # scalar broadcast
])
def test_grad_add_sub_mul_broadcast(shapes, rng):
    sa, sb = shapes
    for op in (T.add, T.sub, T.mul):
        for _ in range(7):
            a = leaf(rng.normal(size=sa))
            b = leaf(rng.normal(size=sb))
            finite_difference_check(lambda: op(a, b).mean(), [a, b])


def test_grad_matmul(rng):
    for _ in range(20):
        a = leaf(rng.normal(size=(3, 4)))
        b = leaf(rng.normal(size=(4, 2)))
        finite_difference_check(lambda: T.matmul(a, b).mean(), [a, b])


def test_grad_concat_slice_gather(rng):
    for _ in range(20):
        a = leaf(rng.normal(size=(3, 2)))
        b = leaf(rng.normal(size=(3, 3)))
        idx = rng.integers(0, 3, size=5)

        def build():
            joined = T.concat([a, b], axis=1)
            sliced = joined[:, 1:4]
            gathered = T.gather_rows(sliced, idx)
            return gathered.mean()

        finite_difference_check(build, [a, b])


def test_grad_reductions(rng):
    for axis in (None, 0, 1):
        for _ in range(7):
            x = leaf(rng.normal(size=(3, 4)))
            finite_difference_check(
                lambda: T.reduce_sum(T.reduce_sum(x, axis=axis, keepdims=True)), [x])
            finite_difference_check(
                lambda: T.reduce_sum(T.reduce_mean(x, axis=axis, keepdims=True)), [x])


def test_grad_smooth_l1(rng):
    for _ in range(20):
        x = leaf(rng.normal(size=(3, 4)) * 2.0)
        target = rng.normal(size=(3, 4))
        gap = np.abs(x.data - target)
        x.data[np.abs(gap - 1.0) < 1e-2] += 0.05  # stay away from the huber kink
        finite_difference_check(lambda: T.smooth_l1(x, target).mean(), [x])


def test_grad_dropout_fixed_mask(rng):
    x = leaf(rng.normal(size=(4, 5)))
    finite_difference_check(
        lambda: T.dropout(x, 0.4, train=True, rng=np.random.default_rng(7)).mean(), [x])


def test_grad_logsumexp(rng):
    for _ in range(20):
        x = leaf(rng.normal(size=(3, 5)) * 3.0)
        finite_difference_check(lambda: T.logsumexp_rows(x).mean(), [x])


# --- Adam -----------------------------------------------------------------------


def test_adam_zero_gradient_fixed_point():
    p = leaf(np.array([[1.0, -2.0]]))
    opt = Adam([p], lr=0.1)
    p.grad = np.zeros_like(p.data)
    before = p.data.copy()
    opt.step()
    np.testing.assert_allclose(p.data, before)


def test_adam_first_step_magnitude():
    # at t=1 bias correction gives m_hat/sqrt(v_hat) = sign(g), so step = -lr
    p = leaf(np.array([[1.0, -1.0, 2.0]]))
    before = p.data.copy()
    opt = Adam([p], lr=0.01)
    p.grad = np.array([[0.5, -3.0, 1.0]])
    opt.step()
    np.testing.assert_allclose(p.data, before - 0.01 * np.sign(p.grad), atol=1e-6)


def test_adam_quadratic_bowl_convergence():
    rng = np.random.default_rng(3)
    target = rng.normal(size=(4, 3))
    p = leaf(np.zeros((4, 3)))
    opt = Adam([p], lr=0.05)
    for _ in range(500):
        opt.zero_grad()
        loss = T.reduce_sum(T.pow_scalar(T.sub(p, Tensor(target)), 2.0))
        loss.backward()
        opt.step()
    assert float(loss.data) < 1e-6
