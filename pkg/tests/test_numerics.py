import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cos import numerics as nm
from cos.numerics import (
    NonFiniteError,
    ShapeError,
    Tensor,
    concat,
    gelu,
    grad_check,
    layer_norm,
    matmul,
    mean,
    mse,
    mul,
    softmax_rows,
)

rng = np.random.default_rng(7)


# -- independent oracles ---------------------------------------------------


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, p = b.shape
    assert k == k2
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def softmax_oracle(row: np.ndarray) -> np.ndarray:
    e = np.exp(row)
    return e / e.sum()


def layer_norm_oracle(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float) -> np.ndarray:
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return (x - mu) / math.sqrt(var + eps) * gain + bias


# -- matmul ----------------------------------------------------------------


def test_matmul_identity():
    a = rng.standard_normal((2, 2))
    out = matmul(Tensor(np.eye(2)), Tensor(a))
    np.testing.assert_array_equal(out.data, a)


def test_matmul_hand_case():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_matches_triple_loop():
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    out = matmul(Tensor(a), Tensor(b))
    np.testing.assert_allclose(out.data, matmul_oracle(a, b), atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matmul_associativity(seed):
    r = np.random.default_rng(seed)
    a = r.standard_normal((3, 4))
    b = r.standard_normal((4, 5))
    c = r.standard_normal((5, 2))
    left = (Tensor(a) @ Tensor(b)) @ Tensor(c)
    right = Tensor(a) @ (Tensor(b) @ Tensor(c))
    denom = max(np.abs(left.data).max(), 1.0)
    assert np.abs(left.data - right.data).max() / denom < 1e-9


def test_matmul_gradients():
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    report = grad_check(lambda: mean(mul(a @ b, a @ b)), {"a": a, "b": b}, tol=1e-6)
    assert report.passed, report


# -- softmax ----------------------------------------------------------------


def test_softmax_uniform():
    out = softmax_rows(Tensor([[0.0, 0.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)


@pytest.mark.parametrize("c", [-100.0, 0.0, 3.5, 250.0])
def test_softmax_shift_invariance(c):
    base = softmax_rows(Tensor([[0.0, 10.0]]))
    shifted = softmax_rows(Tensor([[c, c + 10.0]]))
    assert np.abs(base.data - shifted.data).max() < 1e-12


def test_softmax_matches_formula():
    row = rng.standard_normal(6)
    out = softmax_rows(Tensor(row.reshape(1, -1)))
    np.testing.assert_allclose(out.data[0], softmax_oracle(row), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_softmax_rows_sum_to_one(vals):
    out = softmax_rows(Tensor(np.array([vals])))
    assert abs(out.data.sum() - 1.0) < 1e-9
    assert (out.data >= 0).all()


def test_softmax_gradients():
    x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 5)))
    report = grad_check(lambda: mean(mul(softmax_rows(x), w)), {"x": x}, tol=1e-6)
    assert report.passed, report


# -- layer norm --------------------------------------------------------------


def test_layer_norm_constant_vector_is_zero():
    x = Tensor(np.full((1, 4), 3.3))
    out = layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.abs(out.data).max() < 1e-6


def test_layer_norm_scale_invariance_at_zero_mean():
    x = rng.standard_normal(6)
    x -= x.mean()
    g, b = Tensor(np.ones(6)), Tensor(np.zeros(6))
    eps = 1e-12  # tiny eps so 5x rescaling cancels exactly
    a = layer_norm(Tensor(x.reshape(1, -1)), g, b, eps=eps)
    c = layer_norm(Tensor(5 * x.reshape(1, -1)), g, b, eps=eps)
    assert np.abs(a.data - c.data).max() < 1e-9


def test_layer_norm_matches_mean_variance_oracle():
    x = rng.standard_normal(9)
    gain = rng.standard_normal(9)
    bias = rng.standard_normal(9)
    out = layer_norm(Tensor(x.reshape(1, -1)), Tensor(gain), Tensor(bias), eps=1e-5)
    np.testing.assert_allclose(out.data[0], layer_norm_oracle(x, gain, bias, 1e-5), atol=1e-10)


def test_layer_norm_dim_mismatch():
    with pytest.raises(ShapeError):
        layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


def test_layer_norm_gradients():
    x = Tensor(rng.standard_normal((4, 6)), requires_grad=True)
    g = Tensor(rng.standard_normal(6), requires_grad=True)
    b = Tensor(rng.standard_normal(6), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 6)))
    report = grad_check(
        lambda: mean(mul(layer_norm(x, g, b), w)), {"x": x, "g": g, "b": b}, tol=1e-5
    )
    assert report.passed, report


# -- remaining ops -----------------------------------------------------------


def test_add_rejects_broadcasting():
    with pytest.raises(ShapeError):
        nm.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(3)))


def test_slice_and_concat_roundtrip():
    x = Tensor(rng.standard_normal((4, 6)))
    back = concat([x[:, 0:2], x[:, 2:6]], axis=1)
    np.testing.assert_array_equal(back.data, x.data)


def test_elementwise_op_gradients():
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    y = Tensor(rng.standard_normal((3, 4)), requires_grad=True)

    def f():
        z = gelu(mul(x, y) + x)
        z = nm.reshape(z, (4, 3))
        z = nm.transpose(z)
        z = concat([z[:, 0:2], z[:, 2:4]], axis=1)
        return mean(mul(z, z))

    report = grad_check(f, {"x": x, "y": y}, tol=1e-5)
    assert report.passed, report


def test_non_finite_is_an_error():
    with pytest.raises(NonFiniteError):
        Tensor([np.inf])
    big = Tensor([[1e308]])
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
        mul(big, 10.0)


def test_tensor_data_is_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


# -- grad_check contract ------------------------------------------------------


def test_grad_check_quadratic():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = mul(mean(mul(x, x)), 2.0)  # sum(x^2) for a 2-vector
    loss.backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0], atol=1e-12)
    x.zero_grad()
    report = grad_check(lambda: mul(mean(mul(x, x)), 2.0), {"x": x}, tol=1e-6)
    assert report.max_rel_error < 1e-6


def test_grad_check_constant_function():
    x = Tensor([1.0, -1.0], requires_grad=True)
    c = Tensor(0.0)
    report = grad_check(lambda: mean(mul(x, 0.0)) + c, {"x": x}, tol=1e-6)
    assert report.max_rel_error == 0.0


def test_grad_check_rejects_bad_h():
    x = Tensor([1.0], requires_grad=True)
    with pytest.raises(ValueError):
        grad_check(lambda: mean(x), {"x": x}, h=0.1)
