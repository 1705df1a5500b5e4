import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hatfreq import autodiff as ad
from hatfreq.autodiff import GraphFreedError, NonFiniteError, ShapeError, Tensor, grad_check
from hatfreq.autodiff.gradcheck import rel_error


def t64(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


# -- matmul ----------------------------------------------------------------------

def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(a, b).data, [[1, 2], [3, 4]])


def _triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_hand_case_and_loop_oracle(rng):
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(out.data, [[19, 22], [43, 50]])
    a, b = rng.standard_normal((3, 5)), rng.standard_normal((5, 4))
    np.testing.assert_allclose(ad.matmul(t64(a), t64(b)).data, _triple_loop(a, b), atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_matmul_backward_rules(rng):
    a, b = t64(rng.standard_normal((3, 4))), t64(rng.standard_normal((4, 2)))
    g = rng.standard_normal((3, 2))
    grads = ad.backward(ad.sum(ad.mul(ad.matmul(a, b), Tensor(g))))
    np.testing.assert_allclose(grads[a], g @ b.data.T)
    np.testing.assert_allclose(grads[b], a.data.T @ g)


# -- softmax -----------------------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=1e-6)
    np.testing.assert_allclose(ad.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(ad.softmax(t64([0.0, math.log(3)])).data, [0.25, 0.75], rtol=1e-12)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(row, c):
    x = np.asarray(row)
    p = ad.softmax(t64(x)).data
    assert abs(p.sum() - 1) < 1e-6
    assert np.all(p > 0) or np.any(x - x.max() < -700)
    np.testing.assert_allclose(ad.softmax(t64(x + c)).data, p, atol=1e-6)


def test_log_softmax_matches_log_of_softmax(rng):
    x = rng.standard_normal((4, 6))
    np.testing.assert_allclose(ad.log_softmax(t64(x), axis=1).data,
                               np.log(ad.softmax(t64(x), axis=1).data), atol=1e-12)


# -- nn primitives -------------------------------------------------------------------

def test_layer_norm_constant_row_is_zero():
    out = ad.layer_norm(Tensor(np.full((2, 5), 3.0)))
    np.testing.assert_array_equal(out.data, np.zeros((2, 5)))


def test_layer_norm_moments(rng):
    out = ad.layer_norm(t64(rng.standard_normal((3, 64)) * 5 + 2), eps=1e-12).data
    np.testing.assert_allclose(out.mean(axis=-1), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=-1), 1, atol=1e-9)


def test_layer_norm_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        ad.layer_norm(Tensor(np.ones((1, 3))), eps=0.0)


def test_gelu_zero_and_known_value():
    assert ad.gelu(Tensor([0.0])).data[0] == 0.0
    # x * Phi(x) at x = 1
    np.testing.assert_allclose(ad.gelu(t64([1.0])).data, [0.8413447460685429], rtol=1e-12)


def test_conv2d_stride_two_sums_blocks():
    out = ad.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))), stride=2)
    np.testing.assert_array_equal(out.data, np.full((1, 1, 2, 2), 4.0))


def _conv_direct(x, w, stride, pad):
    x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh, ow = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for b in range(n):
        for f in range(o):
            for i in range(oh):
                for j in range(ow):
                    patch = x[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, f, i, j] = np.sum(patch * w[f])
    return out


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_matches_direct_summation(rng, stride, pad):
    x, w = rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((4, 3, 3, 3))
    out = ad.conv2d(t64(x), t64(w), stride=stride, padding=pad).data
    np.testing.assert_allclose(out, _conv_direct(x, w, stride, pad), atol=1e-10)


def test_embedding_and_reshape_transpose(rng):
    table = t64(rng.standard_normal((5, 3)))
    ids = np.array([[0, 4], [4, 4]])
    out = ad.embedding(table, ids)
    np.testing.assert_array_equal(out.data, table.data[ids])
    g = ad.backward(ad.sum(out))[table]
    np.testing.assert_array_equal(g[:, 0], [1, 0, 0, 0, 3])
    x = t64(np.arange(6.0))
    y = ad.transpose(ad.reshape(x, (2, 3)))
    np.testing.assert_array_equal(y.data, np.arange(6.0).reshape(2, 3).T)


# -- backward -----------------------------------------------------------------------

@given(st.lists(st.integers(1, 4), min_size=0, max_size=3))
def test_backward_of_sum_is_ones(shape):
    x = t64(np.random.default_rng(0).standard_normal(shape))
    np.testing.assert_array_equal(ad.backward(ad.sum(x))[x], np.ones(shape))


def test_backward_of_square_sum():
    x = t64([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(ad.backward(ad.sum(ad.mul(x, x)))[x], [2, 4, 6])
    np.testing.assert_array_equal(x.grad, [2, 4, 6])


def test_backward_rejects_non_scalar_and_freed_graph():
    x = t64([1.0, 2.0])
    with pytest.raises(ShapeError):
        ad.backward(ad.mul(x, x))
    loss = ad.sum(ad.mul(x, x))
    ad.backward(loss)
    with pytest.raises(GraphFreedError):
        ad.backward(loss)


def test_retain_graph_allows_second_pass():
    x = t64([1.0, 2.0])
    loss = ad.sum(ad.exp(x))
    first = ad.backward(loss, retain_graph=True)[x]
    np.testing.assert_array_equal(ad.backward(loss)[x], first)


def test_backward_is_linear_in_seed(rng):
    x = t64(rng.standard_normal((3, 3)))
    y = t64(rng.standard_normal((3, 3)))

    def loss():
        return ad.sum(ad.tanh(ad.matmul(x, y)))

    g1 = ad.backward(loss())
    g2 = ad.backward(loss(), seed=2.0)
    for leaf in (x, y):
        np.testing.assert_array_equal(g2[leaf], 2 * g1[leaf])


def test_nonfinite_names_primitive():
    with pytest.raises(NonFiniteError, match="log"):
        ad.log(Tensor([0.0, 1.0]))


def test_no_grad_records_nothing():
    x = t64([1.0])
    with ad.no_grad():
        y = ad.mul(x, x)
    assert y.is_leaf and not y.requires_grad


def test_tensor_data_is_read_only():
    x = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        x.data[0] = 5.0


def test_default_dtype_is_float32_and_switchable():
    assert Tensor([1.0]).dtype == np.float32
    with ad.default_dtype(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


# -- grad_check ---------------------------------------------------------------------

def test_grad_check_half_squared_norm_exact(rng):
    rep = grad_check(lambda x: ad.scale(ad.sum(ad.mul(x, x)), 0.5), t64(rng.standard_normal(7)))
    assert rep.passed and rep.max_rel_error < 1e-9


def test_grad_check_softmax_regression(rng):
    w = rng.standard_normal((4, 5))
    y = np.eye(4)[[1]]

    def f(x):
        p = ad.log_softmax(ad.reshape(ad.matmul(Tensor(w), x), (1, 4)), axis=1)
        return ad.neg(ad.sum(ad.mul(p, Tensor(y))))

    rep = grad_check(f, t64(rng.standard_normal((5, 1))), h=1e-5, tol=1e-4)
    assert rep.passed, rep


def test_grad_check_zero_tolerance_always_fails(rng):
    rep = grad_check(lambda x: ad.sum(x), t64(rng.standard_normal(3)), tol=0.0)
    assert not rep.passed


def test_grad_check_errors():
    with pytest.raises(ValueError):
        grad_check(lambda x: ad.sum(x), t64([1.0]), h=0.0)
    with pytest.raises(NonFiniteError):
        grad_check(lambda x: ad.sum(ad.log(x)), t64([1e-9]), h=1e-5)


UNARY = {
    "exp": ad.exp, "tanh": ad.tanh, "gelu": ad.gelu, "relu_shifted": lambda x: ad.relu(ad.add(x, 10.0)),
    "sqrt": lambda x: ad.sqrt(ad.add(ad.mul(x, x), 1.0)),
    "log": lambda x: ad.log(ad.add(ad.mul(x, x), 1.0)),
    "power": lambda x: ad.power(ad.add(ad.mul(x, x), 1.0), 1.5),
    "softmax": lambda x: ad.softmax(x, axis=-1),
    "log_softmax": lambda x: ad.log_softmax(x, axis=-1),
    "layer_norm": lambda x: ad.layer_norm(x, eps=1e-5),
    "mean": lambda x: ad.mean(x, axis=0, keepdims=True),
    "transpose": lambda x: ad.transpose(x),
    "index": lambda x: x[[0, 0, 1]],
    "concat": lambda x: ad.concat([x, ad.scale(x, 2.0)], axis=1),
    "broadcast": lambda x: ad.broadcast_to(ad.sum(x, axis=0, keepdims=True), (3,) + x.shape[1:]),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(data=st.data())
def test_primitive_gradients_match_finite_differences(name, data):
    shape = (data.draw(st.integers(2, 4)), data.draw(st.integers(2, 5)))
    seed = data.draw(st.integers(0, 2 ** 16))
    r = np.random.default_rng(seed)
    x = t64(r.standard_normal(shape))
    # probe weights bounded away from 0 so no gradient entry is ill-conditioned for a relative error
    out_shape = UNARY[name](x).shape
    probe = r.choice([-1.0, 1.0], out_shape) * r.uniform(0.5, 1.5, out_shape)
    rep = grad_check(lambda t: ad.sum(ad.mul(UNARY[name](t), Tensor(probe))), x, h=1e-5, tol=1e-4)
    assert rep.passed, rep


BINARY = {"add": ad.add, "sub": ad.sub, "mul": ad.mul,
          "div": lambda a, b: ad.div(a, ad.add(ad.mul(b, b), 1.0))}


@pytest.mark.parametrize("name", sorted(BINARY))
@given(seed=st.integers(0, 2 ** 16), broadcast=st.booleans())
def test_binary_gradients_with_broadcasting(name, seed, broadcast):
    r = np.random.default_rng(seed)
    a = t64(r.standard_normal((3, 4)))
    b_val = r.standard_normal((1, 4) if broadcast else (3, 4))
    for wrt in ("a", "b"):
        if wrt == "a":
            rep = grad_check(lambda t: ad.sum(ad.tanh(BINARY[name](t, Tensor(b_val)))), a)
        else:
            rep = grad_check(lambda t: ad.sum(ad.tanh(BINARY[name](Tensor(a.data), t))), t64(b_val))
        assert rep.passed, (wrt, rep)


@given(seed=st.integers(0, 2 ** 16), stride=st.sampled_from([1, 2]), pad=st.sampled_from([0, 1]))
def test_conv2d_gradients(seed, stride, pad):
    r = np.random.default_rng(seed)
    x = t64(r.standard_normal((2, 2, 5, 5)))
    # small weights keep tanh out of saturation, where gradients fall to round-off level
    w = 0.3 * r.standard_normal((3, 2, 3, 3))
    b = r.standard_normal(3)
    rep = grad_check(lambda t: ad.sum(ad.tanh(ad.conv2d(t, Tensor(w), stride, pad, Tensor(b)))), x)
    assert rep.passed, rep
    rep = grad_check(lambda t: ad.sum(ad.tanh(ad.conv2d(Tensor(x.data), t, stride, pad))), t64(w))
    assert rep.passed, rep


def test_linear_and_pool_gradients(rng):
    w = rng.standard_normal((4, 3))
    rep = grad_check(lambda t: ad.sum(ad.tanh(ad.linear(t, Tensor(w), Tensor(np.ones(3))))),
                     t64(rng.standard_normal((2, 5, 4))))
    assert rep.passed
    rep = grad_check(lambda t: ad.sum(ad.tanh(ad.global_avg_pool(t))), t64(rng.standard_normal((2, 3, 4, 4))))
    assert rep.passed



def test_rel_error_floor_bounds_the_denominator():
    a, n = np.array([0.0, 2.0]), np.array([1e-11, 2.0 + 2e-9])
    assert np.allclose(rel_error(a, n), [1e-3, 1e-9])
    assert np.allclose(rel_error(a, n, floor=1e-6), [1e-5, 1e-9])
