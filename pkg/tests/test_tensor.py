import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pitransformer import tensor as T
from pitransformer.errors import DomainError, NumericalError, ShapeError
from pitransformer.tensor import Tensor

from oracles import central_difference, rel_error


def grad_check(fn, *arrays, tol=1e-6):
    """Compare backward() of scalar fn(*tensors) against central differences."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    fn(*leaves).backward()
    numeric = central_difference(lambda: fn(*[Tensor(a) for a in arrays]).item(), arrays)
    for leaf, num in zip(leaves, numeric):
        assert rel_error(leaf.grad, num) < tol


finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def rand(*shape, seed=0):
    return np.random.default_rng(seed).normal(size=shape)


# -- matmul -----------------------------------------------------------------
def test_matmul_all_ones():
    out = Tensor(np.ones((2, 3))) @ Tensor(np.ones((3, 2)))
    np.testing.assert_array_equal(out.data, np.full((2, 2), 3.0))


def test_matmul_identity():
    m = rand(3, 4)
    np.testing.assert_array_equal((Tensor(np.eye(3)) @ Tensor(m)).data, m)


def test_matmul_gradient():
    w = rand(4, 2, seed=3)
    grad_check(lambda a, b: T.sum_(T.matmul(a, b) * w), rand(4, 5, seed=1), rand(5, 2, seed=2))


def test_matmul_batched_gradient():
    grad_check(lambda a, b: T.sum_(T.exp(T.matmul(a, b) * 0.3)), rand(2, 3, 4, 5, seed=4), rand(2, 3, 5, 2, seed=5))


def test_matmul_broadcast_right_gradient():
    grad_check(lambda a, b: T.sum_(T.matmul(a, b) * T.matmul(a, b)), rand(3, 4, 5, seed=6), rand(5, 2, seed=7))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


# -- elementwise ------------------------------------------------------------
@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 6), elements=st.floats(0.01, 50)))
def test_exp_log_inverse(x):
    np.testing.assert_allclose(T.exp(T.log(Tensor(x))).data, x, rtol=1e-12)


def test_relu_values():
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 2.0, 0.0])).data, [0.0, 2.0, 0.0])


def test_log_of_non_positive_is_domain_error():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        T.log(Tensor([-2.0]))


def test_abs_gradient_zero_at_zero():
    x = Tensor([0.0, -2.0, 3.0], requires_grad=True)
    T.sum_(T.abs_(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, -1.0, 1.0])


def test_mean_abs_gradient():
    x = rand(3, 4, seed=8)
    x[np.abs(x) < 0.05] = 0.5
    grad_check(lambda a: T.mean(T.abs_(a)), x)


@pytest.mark.parametrize(
    "fn",
    [
        lambda a, b: T.sum_(T.add(a, b) * T.add(a, b)),
        lambda a, b: T.sum_(T.sub(a, b) * a),
        lambda a, b: T.sum_(T.mul(a, b) * T.mul(a, b)),
        lambda a, b: T.sum_(T.exp(a * 0.5) * b),
        lambda a, b: T.sum_(T.relu(a) * b),
        lambda a, b: T.sum_(T.log(T.exp(a) + 1.0) * b),
    ],
)
def test_binary_gradients(fn):
    a = rand(3, 4, seed=9)
    a[np.abs(a) < 0.05] = 0.3  # keep relu away from its kink
    grad_check(fn, a, rand(3, 4, seed=10))


@pytest.mark.parametrize(
    "shape_b",
    [(4,), (1,), (3, 1), (1, 4), ()],
)
def test_broadcast_gradients(shape_b):
    grad_check(lambda a, b: T.sum_((a * b + b) * a), rand(3, 4, seed=11), rand(*shape_b, seed=12))


def test_incompatible_broadcast_is_shape_error():
    with pytest.raises(ShapeError):
        Tensor(np.ones((3, 4))) + Tensor(np.ones((3,)))


@pytest.mark.parametrize(
    "fn",
    [
        lambda a: T.sum_(T.sum_(a, axis=1) * T.sum_(a, axis=1)),
        lambda a: T.sum_(T.mean(a, axis=0, keepdims=True) * a),
        lambda a: T.sum_(T.reshape(a, (4, 3)) @ Tensor(rand(3, 2, seed=13))),
        lambda a: T.sum_(T.transpose(a, (1, 0)) * Tensor(rand(4, 3, seed=14))),
        lambda a: T.sum_(T.swapaxes(a, 0, 1) * T.swapaxes(a, 0, 1)),
        lambda a: T.sum_(a[1:, ::2] * a[:2, 1::2]),
        lambda a: T.sum_(T.concat([a, a * 2.0], axis=1) * Tensor(rand(3, 8, seed=15))),
    ],
)
def test_shape_op_gradients(fn):
    grad_check(fn, rand(3, 4, seed=16))


# -- softmax ----------------------------------------------------------------
def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=1e-15)


def test_softmax_large_input_stable():
    y = T.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(y))
    assert y[0] == 1.0 and y[1] < 1e-300


def test_softmax_non_finite_raises():
    with pytest.raises(NumericalError):
        T.softmax(Tensor([np.inf, 0.0]))
    with pytest.raises(NumericalError):
        T.softmax(Tensor([np.nan, 0.0]))


def test_softmax_jacobian():
    w = rand(2, 5, seed=17)
    grad_check(lambda a: T.sum_(T.softmax(a, axis=-1) * w), rand(2, 5, seed=18))


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (3, 5), elements=finite))
def test_softmax_rows_sum_to_one(x):
    np.testing.assert_allclose(T.softmax(Tensor(x)).data.sum(axis=-1), 1.0, rtol=1e-12)


# -- layer norm -------------------------------------------------------------
def test_layer_norm_constant_row_is_zero():
    out = T.layer_norm(Tensor(np.full((2, 6), 4.2)), Tensor(np.ones(6)), Tensor(np.zeros(6)))
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (4, 16), elements=st.floats(-100, 100)))
def test_layer_norm_moments(x):
    x = x + np.linspace(0, 1, 16)  # no constant rows
    out = T.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    var = x.var(axis=-1)
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.var(axis=-1), var / (var + 1e-5), rtol=1e-9)


def test_layer_norm_gradient():
    w = rand(3, 6, seed=19)
    grad_check(lambda x, g, b: T.sum_(T.layer_norm(x, g, b) * w),
               rand(3, 6, seed=20), rand(6, seed=21), rand(6, seed=22))


# -- backward ---------------------------------------------------------------
def test_backward_sum_gives_ones():
    x = Tensor(rand(3, 2), requires_grad=True)
    T.sum_(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 2)))


def test_backward_sum_of_squares_gives_2x():
    a = rand(5)
    x = Tensor(a, requires_grad=True)
    T.sum_(x * x).backward()
    np.testing.assert_allclose(x.grad, 2 * a, rtol=1e-15)


def test_backward_non_scalar_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()


def test_gradients_accumulate_across_reuse():
    x = Tensor([2.0], requires_grad=True)
    T.sum_(x * x * x + x).backward()
    np.testing.assert_allclose(x.grad, [13.0])


def test_leaf_grad_accumulates_over_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    T.sum_(x).backward()
    T.sum_(x * 3.0).backward()
    np.testing.assert_array_equal(x.grad, [4.0, 4.0])


def test_intermediate_grad_only_when_retained():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = (x * 2.0).retain_grad()
    z = x * 3.0
    T.sum_(y * z).backward()
    np.testing.assert_allclose(y.grad, [3.0, 6.0])
    assert z.grad is None


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad and T.is_grad_enabled()
