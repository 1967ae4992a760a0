"""Gradient checks for every primitive plus graph bookkeeping."""
import numpy as np
import pytest

from noisetilt import autodiff as ad


def num_grad(f, x, eps=1e-6):
    g = np.zeros_like(x, dtype=np.float64)
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = eps
        g.flat[i] = (f(x + step) - f(x - step)) / (2 * eps)
    return g


def check_unary(op, x, atol=1e-8):
    node = ad.param(x)
    out = ad.asum(op(node))
    grads = ad.backprop(out)
    ref = num_grad(lambda v: float(op(ad.constant(v)).value.sum()), x)
    np.testing.assert_allclose(grads[id(node)], ref, rtol=1e-6, atol=atol)


@pytest.mark.parametrize("name", ["tanh", "sigmoid", "silu", "identity"])
def test_activation_gradients(name):
    rng = np.random.default_rng(0)
    check_unary(ad.ACTIVATIONS[name], rng.standard_normal(7))
    check_unary(ad.ACTIVATIONS[name], rng.standard_normal((3, 5)))


def test_neg_gradient():
    check_unary(ad.neg, np.random.default_rng(1).standard_normal(4))


def test_add_sub_mul_gradients():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    for op in (ad.add, ad.sub, ad.mul):
        na, nb = ad.param(a), ad.param(b)
        grads = ad.backprop(ad.asum(op(na, nb)))
        ga = num_grad(lambda v: float(op(ad.constant(v), ad.constant(b)).value.sum()), a)
        gb = num_grad(lambda v: float(op(ad.constant(a), ad.constant(v)).value.sum()), b)
        np.testing.assert_allclose(grads[id(na)], ga, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(grads[id(nb)], gb, rtol=1e-6, atol=1e-8)


def test_broadcast_gradients_unbroadcast():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal(3)
    na, nb = ad.param(a), ad.param(b)
    grads = ad.backprop(ad.asum(ad.mul(na, nb)))
    assert grads[id(nb)].shape == (3,)
    gb = num_grad(lambda v: float((a * v).sum()), b)
    np.testing.assert_allclose(grads[id(nb)], gb, rtol=1e-6, atol=1e-8)


def test_linear_vector_and_batch():
    rng = np.random.default_rng(4)
    w = rng.standard_normal((3, 5))
    b = rng.standard_normal(3)
    x = rng.standard_normal(5)
    nx, nw, nb = ad.param(x), ad.param(w), ad.param(b)
    grads = ad.backprop(ad.asum(ad.linear(nx, nw, nb)))
    np.testing.assert_allclose(
        grads[id(nx)], num_grad(lambda v: float((w @ v + b).sum()), x),
        rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(
        grads[id(nw)], num_grad(lambda v: float((v @ x + b).sum()), w),
        rtol=1e-6, atol=1e-8)

    xb = rng.standard_normal((6, 5))
    nx2, nw2 = ad.param(xb), ad.param(w)
    grads = ad.backprop(ad.asum(ad.linear(nx2, nw2, ad.constant(b))))
    np.testing.assert_allclose(
        grads[id(nw2)], num_grad(lambda v: float((xb @ v.T + b).sum()), w),
        rtol=1e-6, atol=1e-8)


def test_slice_concat_sum_mean_gradients():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((3, 6))
    na = ad.param(a)
    grads = ad.backprop(ad.asum(ad.slice_last(na, 1, 4)))
    expected = np.zeros_like(a)
    expected[:, 1:4] = 1.0
    np.testing.assert_array_equal(grads[id(na)], expected)

    b = rng.standard_normal((3, 2))
    na, nb = ad.param(a), ad.param(b)
    out = ad.amean(ad.concat_last(na, nb), axis=None)
    grads = ad.backprop(out)
    np.testing.assert_allclose(grads[id(na)], np.full(a.shape, 1.0 / 24))
    np.testing.assert_allclose(grads[id(nb)], np.full(b.shape, 1.0 / 24))


def test_dot_and_sumsq_rows():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((4, 3))
    na = ad.param(a)
    grads = ad.backprop(ad.asum(ad.sumsq_rows(na)))
    np.testing.assert_allclose(grads[id(na)], 2 * a, rtol=1e-12)


def test_shape_errors():
    with pytest.raises(ad.ShapeError):
        ad.add(ad.constant(np.zeros(3)), ad.constant(np.zeros(4)))
    with pytest.raises(ad.ShapeError):
        ad.linear(ad.constant(np.zeros(3)), ad.constant(np.zeros((2, 4))))
    with pytest.raises(ad.ShapeError):
        ad.linear(ad.constant(np.zeros(4)), ad.constant(np.zeros(4)))
    with pytest.raises(ad.ShapeError):
        ad.concat_last(ad.constant(np.zeros((2, 3))), ad.constant(np.zeros(3)))


def test_requires_grad_propagates():
    p = ad.param(np.ones(3))
    c = ad.constant(np.ones(3))
    assert ad.add(p, c).requires_grad
    assert not ad.add(c, c).requires_grad


def test_reused_node_accumulates():
    x = ad.param(np.array([2.0]))
    y = ad.mul(x, x)     # x^2: gradient 2x
    grads = ad.backprop(ad.asum(y))
    np.testing.assert_allclose(grads[id(x)], [4.0])


def test_graph_state_error():
    g = ad.Graph(lambda x: ad.asum(ad.tanh(x)), ["x"])
    with pytest.raises(ad.GraphStateError):
        g.backward()
    g.forward({"x": np.ones(3)})
    out = g.backward()
    assert out["x"].shape == (3,)
    with pytest.raises(KeyError):
        g.forward({})
