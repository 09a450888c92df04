import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from preqinfo.numkit import (Layout, LabelError, OptimizerState, ParamVector, RngStream, ShapeError, affine_backward,
                             affine_forward, batch_nll, embedding_backward, embedding_forward, log_softmax,
                             numeric_grad, optimizer_step, rel_error, softmax, softmax_nll, tanh_backward,
                             tanh_forward)

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def _pv(values):
    values = np.asarray(values, dtype=np.float64)
    return ParamVector(values, Layout.from_shapes([("w", values.shape)]))


# affine --------------------------------------------------------------------


def test_affine_identity_case():
    out = affine_forward(np.array([[1.0, 0.0]]), np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(out, [[1.0, 0.0]])


def test_affine_zero_input_returns_bias():
    W = np.random.default_rng(0).normal(size=(2, 2))
    out = affine_forward(np.zeros((1, 2)), W, np.array([3.0, -1.0]))
    np.testing.assert_array_equal(out, [[3.0, -1.0]])


def test_affine_matches_scalar_loop():
    gen = np.random.default_rng(1)
    x, W, b = gen.normal(size=(1, 2)), gen.normal(size=(3, 2)), gen.normal(size=3)
    expect = [sum(W[i, j] * x[0, j] for j in range(2)) + b[i] for i in range(3)]
    np.testing.assert_allclose(affine_forward(x, W, b)[0], expect, rtol=0, atol=1e-14)


def test_affine_dimension_mismatch():
    with pytest.raises(ShapeError):
        affine_forward(np.zeros((1, 3)), np.eye(2), np.zeros(2))


# softmax and nll -------------------------------------------------------------


def test_softmax_nll_uniform_is_ln_k():
    loss, _ = softmax_nll(np.zeros(10), 3)
    assert abs(loss - math.log(10)) <= 1e-12


def test_softmax_nll_confident_correct():
    loss, _ = softmax_nll(np.array([30.0, -30.0]), 0)
    assert loss <= 1e-9


def test_softmax_nll_direct_evaluation():
    loss, grad = softmax_nll(np.array([1.0, 2.0, 3.0]), 1)
    e = math.e
    assert abs(loss - (math.log(e + e ** 2 + e ** 3) - 2.0)) <= 1e-12
    p = np.exp([1.0, 2.0, 3.0]) / np.exp([1.0, 2.0, 3.0]).sum()
    np.testing.assert_allclose(grad, p - np.array([0, 1, 0]), atol=1e-14)


def test_softmax_nll_label_out_of_range():
    with pytest.raises(LabelError):
        softmax_nll(np.zeros(3), 3)


def test_softmax_nll_clamps_impossible_label():
    loss, _ = softmax_nll(np.array([0.0, -1e6]), 1)
    assert loss == pytest.approx(-math.log(1e-9))


def test_batch_nll_counts_clamps():
    losses, _, clamps = batch_nll(np.array([[0.0, -1e6], [0.0, 0.0]]), np.array([1, 0]))
    assert clamps == 1
    assert losses[1] == pytest.approx(math.log(2))


def test_batch_nll_span_target_sums_rows():
    logits = np.array([[0.3, -0.2, 1.1, 0.0]])
    losses, grad, _ = batch_nll(logits, np.array([1]), row_end=np.array([3]))
    p = softmax(logits)[0]
    assert losses[0] == pytest.approx(-math.log(p[1] + p[2]), abs=1e-12)

    def f(z):
        return float(batch_nll(z, np.array([1]), row_end=np.array([3]))[0].sum())

    assert rel_error(grad, numeric_grad(f, logits)) <= 1e-6


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 12), elements=finite))
def test_softmax_sums_to_one(z):
    assert abs(softmax(z).sum() - 1.0) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50), st.floats(-100, 100, allow_nan=False), st.data())
def test_uniform_logits_cost_ln_k(K, c, data):
    label = data.draw(st.integers(0, K - 1))
    loss, _ = softmax_nll(np.full(K, c), label)
    assert abs(loss - math.log(K)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(2, 8), elements=st.floats(-5, 5)), st.data())
def test_softmax_nll_gradient_matches_differences(z, data):
    label = data.draw(st.integers(0, len(z) - 1))
    _, grad = softmax_nll(z, label)
    num = numeric_grad(lambda v: softmax_nll(v, label)[0], z)
    assert rel_error(grad, num) <= 1e-4


def test_log_softmax_mask_excludes_rows():
    lp = log_softmax(np.array([[1.0, 2.0, 3.0]]), np.array([[True, False, True]]))
    assert lp[0, 1] == -np.inf
    assert np.exp(lp[0, [0, 2]]).sum() == pytest.approx(1.0)


# layer gradients -------------------------------------------------------------


def _check(f, analytic, x, points=20, seed=0):
    gen = np.random.default_rng(seed)
    coords = gen.choice(x.size, size=min(points, x.size), replace=False)
    num = numeric_grad(f, x, coords=coords)
    return rel_error(analytic.reshape(-1)[coords], num.reshape(-1)[coords])


def test_affine_backward_matches_differences():
    gen = np.random.default_rng(3)
    x, W, b = gen.normal(size=(5, 4)), gen.normal(size=(3, 4)), gen.normal(size=3)
    g = gen.normal(size=(5, 3))
    dx, dW, db = affine_backward(x, W, g)
    assert _check(lambda v: float((affine_forward(v, W, b) * g).sum()), dx, x.copy()) <= 1e-4
    assert _check(lambda v: float((affine_forward(x, v, b) * g).sum()), dW, W.copy()) <= 1e-4
    assert _check(lambda v: float((affine_forward(x, W, v) * g).sum()), db, b.copy()) <= 1e-4


def test_tanh_backward_matches_differences():
    gen = np.random.default_rng(4)
    z, g = gen.normal(size=(4, 6)), gen.normal(size=(4, 6))
    analytic = tanh_backward(tanh_forward(z), g)
    assert _check(lambda v: float((tanh_forward(v) * g).sum()), analytic, z.copy()) <= 1e-4


def test_embedding_backward_matches_differences():
    gen = np.random.default_rng(5)
    E = gen.normal(size=(7, 3))
    tokens = np.array([0, 3, 3, 6, 1])
    g = gen.normal(size=(5, 3))
    analytic = embedding_backward(tokens, E.shape, g)
    assert _check(lambda v: float((embedding_forward(tokens, v) * g).sum()), analytic, E.copy()) <= 1e-4


# optimizer -------------------------------------------------------------------


def test_zero_gradient_leaves_params():
    p = _pv([1.0, -2.0, 0.5])
    new, _ = optimizer_step(p, _pv(np.zeros(3)), OptimizerState("sgd-momentum", lr=0.1, beta1=0.0))
    np.testing.assert_array_equal(new.values, p.values)


@pytest.mark.parametrize("kind", ["sgd-momentum", "adam"])
def test_zero_lr_leaves_params(kind):
    p = _pv([1.0, -2.0, 0.5])
    new, _ = optimizer_step(p, _pv([0.3, 0.1, -4.0]), OptimizerState(kind, lr=0.0))
    np.testing.assert_array_equal(new.values, p.values)


def test_sgd_reaches_quadratic_minimum():
    # loss (x - 3)^2, gradient 2(x - 3): each step contracts the error by 0.8
    p, st_ = _pv([0.0]), OptimizerState("sgd-momentum", lr=0.1, beta1=0.0)
    for _ in range(100):
        p, st_ = optimizer_step(p, _pv(2 * (p.values - 3.0)), st_)
    assert abs(p.values[0] - 3.0) < 1e-6


def test_optimizer_shape_mismatch():
    with pytest.raises(ShapeError):
        optimizer_step(_pv([1.0, 2.0]), _pv([1.0]), OptimizerState())


def test_optimizer_step_does_not_mutate_inputs():
    p, g = _pv([1.0, 2.0]), _pv([0.5, 0.5])
    st0 = OptimizerState("adam", lr=0.1)
    optimizer_step(p, g, st0)
    np.testing.assert_array_equal(p.values, [1.0, 2.0])
    assert st0.step == 0 and st0.m is None


# rng and parameter vectors ---------------------------------------------------


def test_rng_reproducible():
    a = RngStream(7, ("x", "y")).generator().random(50)
    b = RngStream(7, ("x", "y")).generator().random(50)
    np.testing.assert_array_equal(a, b)


def test_rng_children_differ():
    r = RngStream(7)
    a, b = r.child("a").generator().random(20), r.child("b").generator().random(20)
    assert not np.array_equal(a, b)


def test_rng_int_labels_normalized():
    assert RngStream(1, (2, "x")) == RngStream(1).child(2).child("x")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32), st.lists(st.text(max_size=5), max_size=3))
def test_rng_same_path_same_draws(seed, path):
    a = RngStream(seed, tuple(path)).generator().integers(0, 1 << 30, 8)
    b = RngStream(seed, tuple(path)).generator().integers(0, 1 << 30, 8)
    np.testing.assert_array_equal(a, b)


def test_param_vector_length_checked():
    with pytest.raises(ShapeError):
        ParamVector(np.zeros(3), Layout.from_shapes([("w", (2, 2))]))


def test_remap_grows_and_fills():
    small = ParamVector(np.arange(6.0), Layout.from_shapes([("W", (2, 3))]))
    big = small.remap(Layout.from_shapes([("W", (3, 3)), ("b", (3,))]), fill=-1.0)
    np.testing.assert_array_equal(big.view("W")[:2], small.view("W"))
    assert np.all(big.view("W")[2] == -1.0) and np.all(big.view("b") == -1.0)
