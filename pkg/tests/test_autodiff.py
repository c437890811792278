import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dmacos import autodiff as ad
from dmacos.model import GruWeights, gru_step


def fd_grad(f, x, h=1e-5):
    """Central differences of scalar f over every entry of array x (in place)."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


# -- matmul ----------------------------------------------------------------


def test_matmul_identity():
    eye = ad.tensor(np.eye(2))
    m = ad.tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((eye @ m).values, [[1, 2], [3, 4]])


def test_matmul_zero():
    out = ad.tensor(np.eye(2)) @ ad.zeros(2, 3)
    np.testing.assert_array_equal(out.values, np.zeros((2, 3)))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    a = ad.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = ad.tensor(rng.normal(size=(4, 2)), requires_grad=True)
    ad.backward(ad.sum(a @ b))
    f = lambda: float((a.values @ b.values).sum())
    assert rel_err(a.grad, fd_grad(f, a.values)) < 1e-6
    assert rel_err(b.grad, fd_grad(f, b.values)) < 1e-6


def test_matmul_vector_operands():
    rng = np.random.default_rng(4)
    v = ad.tensor(rng.normal(size=4), requires_grad=True)
    m = ad.tensor(rng.normal(size=(4, 3)), requires_grad=True)
    ad.backward(ad.sum(ad.tanh(v @ m)))
    f = lambda: float(np.tanh(v.values @ m.values).sum())
    assert rel_err(v.grad, fd_grad(f, v.values)) < 1e-6
    assert rel_err(m.grad, fd_grad(f, m.values)) < 1e-6


def test_matmul_shape_mismatch():
    with pytest.raises(ad.DimensionError):
        ad.zeros(2, 3) @ ad.zeros(2, 3)


# -- elementwise -----------------------------------------------------------


def test_sigmoid_and_tanh_at_zero():
    assert ad.sigmoid(ad.tensor([0.0])).item() == 0.5
    assert ad.tanh(ad.tensor([0.0])).item() == 0.0


def test_sigmoid_closed_form_and_gradient():
    x = ad.tensor([2.0], requires_grad=True)
    y = ad.sigmoid(x)
    assert abs(y.item() - 1 / (1 + math.exp(-2.0))) < 1e-12
    assert abs(y.item() - 0.880797) < 1e-6
    ad.backward(y)
    h = 1e-5
    numeric = (1 / (1 + math.exp(-(2 + h))) - 1 / (1 + math.exp(-(2 - h)))) / (2 * h)
    assert abs(x.grad[0] - numeric) < 1e-6


def test_sigmoid_is_stable_for_large_inputs():
    with np.errstate(over="raise", invalid="raise"):
        y = ad.sigmoid(ad.tensor([-800.0, 800.0]))
    np.testing.assert_allclose(y.values, [0.0, 1.0], atol=1e-300)


@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_binary_elementwise_gradients(op):
    rng = np.random.default_rng(5)
    a = ad.tensor(rng.normal(size=5), requires_grad=True)
    b = ad.tensor(rng.normal(size=5), requires_grad=True)
    ad.backward(ad.sum(ad.tanh(ad.elementwise(op, a, b))))
    fn = {"add": np.add, "sub": np.subtract, "mul": np.multiply}[op]
    f = lambda: float(np.tanh(fn(a.values, b.values)).sum())
    assert rel_err(a.grad, fd_grad(f, a.values)) < 1e-6
    assert rel_err(b.grad, fd_grad(f, b.values)) < 1e-6


def test_elementwise_rejects_mismatched_shapes_and_unknown_ops():
    with pytest.raises(ad.DimensionError):
        ad.elementwise("add", ad.zeros(3), ad.zeros(4))
    with pytest.raises(ad.ContractError):
        ad.elementwise("pow", ad.zeros(3))


def test_log_clamps_and_counts():
    ad.reset_clamp_events()
    x = ad.tensor([0.0, 1.0], requires_grad=True)
    y = ad.log(x)
    assert np.isfinite(y.values).all()
    assert ad.reset_clamp_events() == 1
    ad.backward(ad.sum(y))
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


# -- softmax ---------------------------------------------------------------


def test_softmax_symmetric():
    np.testing.assert_allclose(ad.softmax(ad.tensor([0.0, 0.0])).values, [0.5, 0.5])


def test_softmax_large_logits_do_not_overflow():
    with np.errstate(over="raise", invalid="raise"):
        out = ad.softmax(ad.tensor([1000.0, 0.0])).values
    assert np.isfinite(out).all()
    assert abs(out[0] - 1.0) < 1e-12 and out[1] < 1e-300


def test_softmax_matches_high_precision():
    getcontext().prec = 50
    e = [Decimal(k).exp() for k in (1, 2, 3)]
    z = sum(e)
    expected = [float(v / z) for v in e]
    np.testing.assert_allclose(ad.softmax(ad.tensor([1.0, 2.0, 3.0])).values, expected, rtol=0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)))
def test_softmax_is_a_distribution(x):
    p = ad.softmax(ad.tensor(x)).values
    assert (p >= 0).all()
    assert abs(p.sum() - 1.0) < 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-5, 5)))
def test_softmax_gradient_matches_finite_differences(x):
    w = np.linspace(-1, 1, x.size)
    t = ad.tensor(x.copy(), requires_grad=True)
    ad.backward(ad.sum(ad.softmax(t) * ad.tensor(w)))

    def f():
        e = np.exp(t.values - t.values.max())
        return float((e / e.sum() * w).sum())

    g = fd_grad(f, t.values)
    assert np.max(np.abs(t.grad - g)) < 1e-8


# -- backward --------------------------------------------------------------


def test_sum_gives_ones():
    p = ad.tensor(np.arange(4.0), requires_grad=True)
    ad.backward(ad.sum(p))
    np.testing.assert_array_equal(p.grad, np.ones(4))


def test_zero_scale_gives_zero_grad():
    p = ad.tensor(np.arange(4.0), requires_grad=True)
    ad.backward(ad.sum(0 * p))
    np.testing.assert_array_equal(p.grad, np.zeros(4))


def test_backward_requires_scalar_with_grad():
    p = ad.tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ad.ContractError):
        ad.backward(p * 2.0)
    with pytest.raises(ad.ContractError):
        ad.backward(ad.sum(ad.tensor(np.ones(3))))


def test_shared_subexpression_visited_once():
    # y = u*u with u = 3x; dy/dx = 18x
    x = ad.tensor([2.0], requires_grad=True)
    u = x * 3.0
    tape = ad.backward(u * u)
    assert x.grad[0] == pytest.approx(36.0)
    assert len(tape) == len({id(n) for n in tape.nodes})


def test_gradients_accumulate_across_calls():
    x = ad.tensor([1.0], requires_grad=True)
    ad.backward(x * 2.0)
    ad.backward(x * 3.0)
    assert x.grad[0] == 5.0


def test_no_grad_records_nothing():
    x = ad.tensor([1.0], requires_grad=True)
    with ad.no_grad():
        y = ad.sigmoid(x * 2.0)
    assert not y.requires_grad and y._parents == ()
    assert ad.grad_enabled()


def test_deep_chain_does_not_recurse():
    x = ad.tensor([0.5], requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    ad.backward(y)
    assert x.grad[0] == 1.0


def test_structural_ops_route_gradients():
    rng = np.random.default_rng(8)
    table = ad.tensor(rng.normal(size=(5, 3)), requires_grad=True)
    rows = ad.take_rows(table, [1, 3, 1])
    v = ad.concat([ad.row(rows, 0), ad.row(rows, 2), ad.take(ad.row(rows, 1), 2)])
    out = ad.sum(ad.pad_right(v, 2) * ad.tensor(np.arange(9.0)))
    ad.backward(out)
    expected = np.zeros((5, 3))
    expected[1] += np.arange(0, 3) + np.arange(3, 6)
    expected[3, 2] += 6
    np.testing.assert_array_equal(table.grad, expected)


def test_stack_and_scale_by():
    a = ad.tensor([1.0, 2.0], requires_grad=True)
    b = ad.tensor([3.0, 4.0], requires_grad=True)
    s = ad.tensor([0.5], requires_grad=True)
    m = ad.stack([a, b])
    out = ad.sum(ad.scale_by(ad.tensor([1.0, -1.0]) @ m, s))
    ad.backward(out)
    assert out.item() == pytest.approx(-2.0)
    np.testing.assert_allclose(a.grad, [0.5, 0.5])
    np.testing.assert_allclose(b.grad, [-0.5, -0.5])
    np.testing.assert_allclose(s.grad, [-4.0])


def test_empty_tensor_rejected():
    with pytest.raises(ad.DimensionError):
        ad.tensor(np.zeros((0, 3)))


# -- grad_check ------------------------------------------------------------


def test_grad_check_quadratic():
    theta = ad.tensor(np.ones(4), requires_grad=True, name="theta")
    report = ad.grad_check(lambda: ad.sum(theta * theta), [theta])
    assert report["theta"] < 1e-8


def test_grad_check_linear_mse():
    rng = np.random.default_rng(11)
    X = ad.constant(rng.normal(size=(6, 3)))
    y = ad.constant(rng.normal(size=6))
    w = ad.tensor(rng.normal(size=3), requires_grad=True, name="w")

    def f():
        r = X @ w - y
        return ad.sum(r * r) * (1 / 6)

    assert ad.grad_check(f, [w])["w"] < 1e-7
    # the analytic gradient itself matches the closed form 2/n X^T (Xw - y)
    w.grad = None
    ad.backward(f())
    closed = 2 / 6 * X.values.T @ (X.values @ w.values - y.values)
    np.testing.assert_allclose(w.grad, closed, rtol=1e-12)


def test_grad_check_gru_step_norm():
    rng = np.random.default_rng(12)
    H, D = 4, 3
    W = {k: ad.tensor(rng.normal(scale=0.5, size=(H + D, H)), requires_grad=True, name=k) for k in ("Wz", "Wr", "Wh")}
    x = ad.tensor(rng.normal(size=D), requires_grad=True, name="x")
    h = ad.tensor(rng.normal(size=H), requires_grad=True, name="h")
    gw = GruWeights(W["Wz"], W["Wr"], W["Wh"])

    def f():
        out = gru_step(x, h, gw)
        return ad.sum(out * out)

    report = ad.grad_check(f, [*W.values(), x, h], max_components=None)
    assert max(report.values()) < 1e-5


def test_grad_check_detects_a_wrong_rule():
    x = ad.tensor([0.3, -0.2], requires_grad=True, name="x")

    def broken():
        def bw(g):
            ad._accum(x, 3 * g * x.values ** 2 + 1.0)  # should be 2x
        return ad.sum(ad._result(x.values ** 2, (x,), bw))

    assert ad.grad_check(broken, [x])["x"] > 0.1


def test_grad_check_rejects_bad_eps():
    x = ad.tensor([1.0], requires_grad=True)
    with pytest.raises(ad.ContractError):
        ad.grad_check(lambda: ad.sum(x), [x], eps=0)


def test_grad_check_nonfinite():
    x = ad.tensor([1.0], requires_grad=True)
    with pytest.raises(ad.NumericError):
        ad.grad_check(lambda: ad.sum(x * float("inf")), [x])
