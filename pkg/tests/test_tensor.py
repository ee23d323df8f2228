import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gentron.errors import NumericsError, ShapeError
from gentron.numerics import (
    Rng, Tensor, attention, backward, check_gradients, concat, exp, gelu, getitem,
    layer_norm, linear, matmul, mean, no_grad, power, randn, silu, softmax, stack, take,
    tanh, tsum,
)

TOL = 1e-4
# Op sweep step: small enough that O(h²) truncation stays below TOL even for
# near-zero gradients; the chain example below uses h = 1e-3.
H = 1e-5


def leaf(rng, *shape, positive=False):
    data = rng.normal(shape)
    if positive:
        data = np.abs(data) + 0.5
    return Tensor(data, requires_grad=True)


def gradcheck(fn, params, seed=0, h=H):
    rng = Rng(seed).fork("weights")
    w = {}

    def loss():
        out = fn()
        if "w" not in w:
            w["w"] = Tensor(rng.normal(out.shape))
        return tsum(out * w["w"])

    report = check_gradients(loss, {str(i): p for i, p in enumerate(params)}, n_samples=64, h=h)
    assert len(report) > 0
    assert report.max_error < TOL, report.entries


# -- finite-difference checks of every op ------------------------------------

UNARY = {
    "exp": exp, "tanh": tanh, "silu": silu, "gelu": gelu,
    "neg": lambda x: -x, "square": lambda x: power(x, 2.0),
    "softmax": lambda x: softmax(x, axis=-1), "mean_axis": lambda x: mean(x, axis=1),
    "sum_keep": lambda x: tsum(x, axis=0, keepdims=True), "reshape": lambda x: x.reshape(4, 3),
    "transpose": lambda x: x.transpose(1, 0), "slice": lambda x: x[1:, ::2],
    "fancy": lambda x: getitem(x, (np.array([0, 2, 2]), np.array([1, 1, 3]))),
    "take": lambda x: take(x, [2, 0, 2]), "layer_norm": lambda x: layer_norm(x),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    x = leaf(Rng(1), 3, 4)
    gradcheck(lambda: UNARY[name](x), [x])


def test_power_fractional():
    x = leaf(Rng(2), 3, 4, positive=True)
    gradcheck(lambda: power(x, 1.5), [x])


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_binary_broadcast_gradients(op):
    r = Rng(3)
    a = leaf(r.fork("a"), 3, 4)
    b = leaf(r.fork("b"), 1, 4, positive=True)
    fns = {"add": lambda: a + b, "sub": lambda: a - b, "mul": lambda: a * b, "div": lambda: a / b}
    gradcheck(fns[op], [a, b])


def test_matmul_gradients():
    r = Rng(4)
    a, b = leaf(r.fork("a"), 2, 3, 4), leaf(r.fork("b"), 4, 5)
    gradcheck(lambda: matmul(a, b), [a, b])
    c = leaf(r.fork("c"), 2, 4, 2)
    gradcheck(lambda: matmul(a, c), [a, c])


def test_linear_layer_norm_chain():
    r = Rng(5)
    x, w, bias = leaf(r.fork("x"), 2, 3, 4), leaf(r.fork("w"), 4, 4), leaf(r.fork("bias"), 4)
    g, beta = leaf(r.fork("g"), 4), leaf(r.fork("beta"), 4)
    gradcheck(lambda: linear(layer_norm(x, g, beta), w, bias), [x, w, bias, g, beta], h=1e-3)


def test_concat_stack_gradients():
    r = Rng(6)
    a, b = leaf(r.fork("a"), 2, 3), leaf(r.fork("b"), 2, 3)
    gradcheck(lambda: concat([a, b], axis=1), [a, b])
    gradcheck(lambda: stack([a, b], axis=0), [a, b])


@pytest.mark.parametrize("masked", [False, True])
def test_attention_gradients(masked):
    r = Rng(7)
    q, k, v = (leaf(r.fork(n), 2, 4, 3) for n in "qkv")
    mask = np.tril(np.ones((4, 4))) if masked else None
    gradcheck(lambda: attention(q, k, v, mask), [q, k, v])


# -- softmax, layer_norm, attention examples -------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(softmax(Tensor([0.0, 0.0, 0.0])).numpy(), [1 / 3] * 3, rtol=1e-6)
    np.testing.assert_allclose(softmax(Tensor([1000.0, 0.0, 0.0])).numpy(), [1, 0, 0], atol=1e-6)
    out = softmax(Tensor(np.log([1.0, 2.0, 3.0]))).numpy()
    np.testing.assert_allclose(out, [1 / 6, 2 / 6, 3 / 6], rtol=1e-6)


def test_layer_norm_examples():
    assert not layer_norm(Tensor(np.full((2, 5), 3.7))).numpy().any()
    np.testing.assert_allclose(layer_norm(Tensor([1.0, 3.0]), eps=1e-12).numpy(), [-1.0, 1.0], rtol=1e-6)
    x = Tensor(Rng(8).normal((3, 4)))
    beta = Tensor([0.5, -1.0, 2.0, 0.0])
    out = layer_norm(x, Tensor(np.zeros(4)), beta).numpy()
    np.testing.assert_array_equal(out, np.broadcast_to(beta.numpy(), (3, 4)).astype(out.dtype))


def test_attention_examples():
    r = Rng(9)
    q, k, v = (Tensor(r.fork(n).normal((2, 1, 3))) for n in "qkv")
    np.testing.assert_allclose(attention(q, k, v).numpy(), v.numpy(), rtol=1e-6)
    q, k, v = (Tensor(r.fork(n + "5").normal((2, 5, 3))) for n in "qkv")
    np.testing.assert_allclose(attention(q, k, v, np.eye(5)).numpy(), v.numpy(), rtol=1e-6)


def test_attention_two_key_brute_force():
    r = Rng(10)
    q, k, v = (r.fork(n).normal((2, 3)) for n in "qkv")
    out = attention(Tensor(q[None]), Tensor(k[None]), Tensor(v[None])).numpy()[0]
    for i in range(2):
        s = [q[i] @ k[j] / np.sqrt(3) for j in range(2)]
        w0 = 1.0 / (1.0 + np.exp(s[1] - s[0]))
        np.testing.assert_allclose(out[i], w0 * v[0] + (1 - w0) * v[1], atol=1e-6)


def test_attention_all_ones_mask_is_bitwise_unmasked():
    r = Rng(11)
    q, k, v = (Tensor(r.fork(n).normal((3, 6, 4)).astype(np.float32)) for n in "qkv")
    a = attention(q, k, v).numpy()
    b = attention(q, k, v, np.ones((6, 6))).numpy()
    assert a.tobytes() == b.tobytes()


def test_attention_fully_masked_row_errors():
    q = Tensor(np.ones((1, 2, 2)))
    mask = np.array([[1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(NumericsError):
        attention(q, q, q, mask)


# -- backward --------------------------------------------------------------------

def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    backward(tsum(x * x))
    assert x.grad == pytest.approx(6.0)


def test_non_scalar_backward_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_disconnected_parameter_gets_zero_or_no_grad():
    x = Tensor(np.ones(3), requires_grad=True)
    p = Tensor(np.ones(2), requires_grad=True)
    p.zero_grad()
    backward(tsum(x * x))
    assert not p.grad.any()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_grad_shape_matches_data():
    r = Rng(12)
    a, b = leaf(r.fork("a"), 4, 1), leaf(r.fork("b"), 3)
    backward(tsum(a * b))
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(0, 2**32))
def test_elementwise_gradients_random_shapes(shape, seed):
    x = leaf(Rng(seed), *shape)
    report = check_gradients(lambda: tsum(gelu(x) * tanh(x)), {"x": x}, n_samples=64, h=H)
    assert report.max_error < TOL


# -- randn -------------------------------------------------------------------------

def test_randn_determinism_and_moments():
    a = randn(Rng(5), (100000,), np.float64).numpy()
    assert np.array_equal(a, randn(Rng(5), (100000,), np.float64).numpy())
    assert abs(a.mean()) < 0.02 and abs(a.var() - 1.0) < 0.05
    assert not np.array_equal(a[:10], randn(Rng(6), (10,), np.float64).numpy())
