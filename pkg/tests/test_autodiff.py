import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chainqa import autodiff as ad
from gradcheck import check_gradients


def rng(seed=0):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- forward values

def test_elementwise_reference_points():
    assert ad.sigmoid(ad.Tensor(np.array(0.0))).item() == 0.5
    assert ad.tanh(ad.Tensor(np.array(0.0))).item() == 0.0
    assert ad.relu(ad.Tensor(np.array(-1.0))).item() == 0.0
    assert ad.elementwise("neg", np.array([2.0])).data[0] == -2.0
    assert ad.elementwise("exp", np.array([0.0])).data[0] == 1.0


def test_sigmoid_stable_for_large_inputs():
    out = ad.sigmoid(np.array([-800.0, 800.0])).data
    np.testing.assert_allclose(out, [0.0, 1.0])


@pytest.mark.parametrize("op", ["sigmoid", "tanh", "relu", "exp", "neg", "softplus"])
def test_elementwise_rejects_non_finite(op):
    with pytest.raises(FloatingPointError):
        fn = ad.softplus if op == "softplus" else (lambda x: ad.elementwise(op, x))
        fn(np.array([1.0, np.nan]))


def test_unknown_elementwise_op():
    with pytest.raises(ValueError):
        ad.elementwise("cosh", np.array([1.0]))


def test_matmul_hand_values():
    np.testing.assert_array_equal(ad.matmul(np.eye(3), np.array([1.0, 2.0, 3.0])).data, [1, 2, 3])
    assert ad.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ad.ShapeError):
        ad.add(np.ones(3), np.ones(4))


def test_softmax_examples():
    np.testing.assert_array_equal(ad.softmax(np.array([0.0, 0.0])).data, [0.5, 0.5])
    for c in (-50.0, 0.0, 3.7, 900.0):
        np.testing.assert_allclose(ad.softmax(np.full(4, c)).data, 0.25, rtol=0, atol=1e-15)


def test_softmax_matches_direct_formula():
    x = rng(1).normal(size=17) * 5
    expected = np.exp(x - x.max()) / np.exp(x - x.max()).sum()
    np.testing.assert_allclose(ad.softmax(x).data, expected, rtol=1e-13)


def test_softmax_empty_rejected():
    with pytest.raises(ad.ShapeError):
        ad.softmax(np.array([]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30), st.floats(-1e3, 1e3))
def test_softmax_distribution_and_shift_invariance(values, shift):
    x = np.array(values)
    p = ad.softmax(x).data
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(ad.softmax(x + shift).data, p, atol=1e-12)


def test_dropout_inference_and_zero_rate_identity():
    x = rng().normal(size=(5, 7))
    assert np.array_equal(ad.dropout(x, 0.3, training=False).data, x)
    assert np.array_equal(ad.dropout(x, 0.0, training=True, rng=3).data, x)


def test_dropout_fraction_and_reproducibility():
    x = np.ones(10_000)
    a = ad.dropout(x, 0.3, training=True, rng=42).data
    b = ad.dropout(x, 0.3, training=True, rng=42).data
    assert np.array_equal(a, b)
    zeroed = np.mean(a == 0)
    assert 0.27 <= zeroed <= 0.33
    np.testing.assert_allclose(a[a != 0], 1 / 0.7)


@pytest.mark.parametrize("rate", [1.0, 1.5, -0.1])
def test_dropout_bad_rate(rate):
    with pytest.raises(ValueError):
        ad.dropout(np.ones(3), rate, training=True, rng=0)


def test_xavier_bounds_determinism_and_mean():
    w = ad.xavier_init((2, 3), 5)
    assert np.all(np.abs(w) <= np.sqrt(6 / 5))
    assert np.array_equal(w, ad.xavier_init((2, 3), 5))
    big = ad.xavier_init((100, 100), 9)
    assert abs(big.mean()) < 0.02


def test_xavier_rejects_non_2d():
    with pytest.raises(ad.ShapeError):
        ad.xavier_init((4,), 0)
    with pytest.raises(ad.ShapeError):
        ad.xavier_init((2, 2, 2), 0)


# ---------------------------------------------------------------- optimizers

def test_sgd_single_step():
    opt = ad.Optimizer([], "sgd", lr=0.1)
    p = np.array([1.0])
    ad.optimizer_step(opt, [p], [np.array([2.0])])
    np.testing.assert_allclose(p, [0.8])


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_gradient_leaves_params(kind):
    opt = ad.Optimizer([], kind, lr=0.5)
    p = np.array([1.0, -2.0])
    ad.optimizer_step(opt, [p], [np.zeros(2)])
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_adam_matches_hand_update():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    opt = ad.Optimizer([], "adam", lr=lr)
    p = np.array([0.5])
    g1, g2 = 0.3, -0.7
    ad.optimizer_step(opt, [p], [np.array([g1])])
    m = (1 - b1) * g1
    v = (1 - b2) * g1 ** 2
    expected = 0.5 - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
    np.testing.assert_allclose(p, [expected], rtol=1e-14)
    ad.optimizer_step(opt, [p], [np.array([g2])])
    m = b1 * m + (1 - b1) * g2
    v = b2 * v + (1 - b2) * g2 ** 2
    expected -= lr * (m / (1 - b1 ** 2)) / (np.sqrt(v / (1 - b2 ** 2)) + eps)
    np.testing.assert_allclose(p, [expected], rtol=1e-14)
    assert opt.step_count == 2


def test_optimizer_shape_mismatch():
    opt = ad.Optimizer([], "sgd", lr=0.1)
    with pytest.raises(ad.ShapeError):
        ad.optimizer_step(opt, [np.zeros(3)], [np.zeros(4)])


def test_unknown_optimizer():
    with pytest.raises(ValueError):
        ad.Optimizer([], "rmsprop")


def test_optimizer_trains_parameter_tensors():
    w = ad.parameter(np.array([3.0]))
    opt = ad.Optimizer([w], "adam", lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        loss = ad.sum(ad.square(ad.sub(w, 1.0)))
        loss.backward()
        opt.step()
    assert abs(w.data[0] - 1.0) < 1e-2


# ---------------------------------------------------------------- tape mechanics

def test_shared_node_gradients_accumulate():
    x = ad.parameter(np.array([2.0, -1.0]))
    y = ad.mul(x, x)
    z = ad.sum(ad.add(y, y))
    z.backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_no_grad_records_nothing():
    x = ad.parameter(np.ones(3))
    with ad.no_grad():
        y = ad.sum(ad.mul(x, 2.0))
    assert not y.requires_grad


def test_deep_chain_backward_is_iterative():
    x = ad.parameter(np.array([1.0]))
    y = x
    for _ in range(5000):
        y = ad.add(y, 0.0)
    ad.sum(y).backward()
    assert x.grad[0] == 1.0


def test_backward_needs_scalar_without_seed():
    x = ad.parameter(np.ones(3))
    with pytest.raises(ad.ShapeError):
        ad.mul(x, 2.0).backward()


# ---------------------------------------------------------------- gradient checks

UNARY = {
    "sigmoid": ad.sigmoid, "tanh": ad.tanh, "exp": ad.exp, "neg": ad.neg,
    "softplus": ad.softplus, "square": ad.square,
    "relu": ad.relu,
    "softmax": lambda x: ad.softmax(x, axis=-1),
    "softmax0": lambda x: ad.softmax(x, axis=0),
    "l2_norm": lambda x: ad.l2_norm(x, axis=-1),
    "transpose": ad.transpose,
    "reshape": lambda x: ad.reshape(x, (-1,)),
    "sum_axis": lambda x: ad.sum(x, axis=0, keepdims=True),
    "mean": lambda x: ad.mean(x, axis=1),
    "getitem": lambda x: ad.getitem(x, (slice(1, 3), 0)),
    "getitem_fancy": lambda x: ad.getitem(x, np.array([0, 2, 2])),
    "take_rows": lambda x: ad.take_rows(x, np.array([3, 0, 3, 1])),
    "dropout": lambda x: ad.dropout(x, 0.3, training=True, rng=11),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    r = rng(zlib.crc32(name.encode()))
    data = r.normal(size=(4, 3))
    if name == "relu":  # keep away from the kink
        data = np.where(np.abs(data) < 0.1, 0.5, data)
    x = ad.parameter(data)
    weights = r.normal(size=UNARY[name](ad.Tensor(data)).shape)
    check_gradients(lambda: ad.sum(ad.mul(UNARY[name](x), weights)), {"x": x})


BINARY = {
    "add": ad.add, "sub": ad.sub, "mul": ad.mul,
    "add_broadcast": lambda a, b: ad.add(a, ad.getitem(b, 0)),
    "matmul": lambda a, b: ad.matmul(a, ad.transpose(b)),
    "concat0": lambda a, b: ad.concat([a, b], axis=0),
    "concat1": lambda a, b: ad.concat([a, b], axis=1),
    "stack": lambda a, b: ad.stack([a, b], axis=1),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients(name):
    r = rng(len(name))
    a = ad.parameter(r.normal(size=(3, 4)))
    b = ad.parameter(r.normal(size=(3, 4)))
    out = BINARY[name](ad.Tensor(a.data), ad.Tensor(b.data))
    weights = r.normal(size=out.shape)
    check_gradients(lambda: ad.sum(ad.mul(BINARY[name](a, b), weights)), {"a": a, "b": b})


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 10_000))
def test_matmul_gradients_random_shapes(n, k, m, seed):
    r = rng(seed)
    a = ad.parameter(r.normal(size=(n, k)))
    b = ad.parameter(r.normal(size=(k, m)))
    w = r.normal(size=(n, m))
    check_gradients(lambda: ad.sum(ad.mul(ad.matmul(a, b), w)), {"a": a, "b": b})


def test_vector_matmul_gradients():
    r = rng(4)
    v = ad.parameter(r.normal(size=5))
    u = ad.parameter(r.normal(size=5))
    m = ad.parameter(r.normal(size=(5, 3)))
    check_gradients(lambda: ad.add(ad.matmul(v, u), ad.sum(ad.matmul(v, m))), {"v": v, "u": u, "m": m})
