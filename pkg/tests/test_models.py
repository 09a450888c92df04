import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from preqinfo.datakit import LabeledDataset, gen_bigram_corpus, true_conditional_entropy
from preqinfo.models import (CheckpointError, Head, IncompatibleError, ModelSpec, Penalty, TrainConfig, accuracy,
                             checkpoint_bytes, example_nll, init_model, load_checkpoint, mean_nll, model_from_bytes,
                             nll_grad, predict_log_probs, reset_head, save_checkpoint, train)
from preqinfo.numkit import ParamVector, RngStream, numeric_grad, rel_error


def _data(X, y, K):
    X = np.asarray(X, dtype=np.float64)
    return LabeledDataset(X, np.asarray(y, dtype=np.int64), K, np.arange(len(y)))


def _gaussian(n=200, d=4, K=3, seed=0, spread=3.0):
    gen = np.random.default_rng(seed)
    means = spread * gen.normal(size=(K, d))
    y = gen.integers(0, K, n)
    return _data(means[y] + gen.normal(size=(n, d)), y, K)


def _true_bigram_model(tm, V):
    """bigram-lm whose logits equal the log table rows (embedding = identity)."""
    spec = ModelSpec.bigram_lm(V, V)
    m = init_model(spec, RngStream(0), scale=0.0)
    pv = m.params.copy()
    pv.view("embed.E")[...] = np.eye(V)
    pv.view("out.W")[...] = np.log(tm.rows).T
    return m.with_values(pv.values)


# construction ----------------------------------------------------------------


def test_param_count_softmax_regression():
    assert ModelSpec.softmax_regression(4, 3).param_count == 15


def test_init_deterministic():
    spec = ModelSpec.mlp(5, 7, 3)
    a, b = init_model(spec, RngStream(11)), init_model(spec, RngStream(11))
    np.testing.assert_array_equal(a.params.values, b.params.values)
    assert a.checkpoint_id() == b.checkpoint_id()


@pytest.mark.parametrize("spec", [ModelSpec.softmax_regression(6, 10), ModelSpec.mlp(6, 16, 10)])
def test_fresh_init_nearly_uniform(spec):
    data = _data(np.random.default_rng(2).normal(size=(500, 6)), np.random.default_rng(3).integers(0, 10, 500), 10)
    assert abs(mean_nll(init_model(spec, RngStream(1)), data) / math.log(10) - 1) < 0.05


def test_bigram_lm_requires_full_vocabulary():
    with pytest.raises(ValueError):
        ModelSpec("bigram-lm", 5, 3, 4)


# prediction -----------------------------------------------------------------


def test_zero_weights_predict_minus_ln_k():
    m = init_model(ModelSpec.softmax_regression(3, 7), RngStream(0), scale=0.0)
    np.testing.assert_allclose(predict_log_probs(m, np.ones(3)), -math.log(7), atol=1e-15)


def test_zero_weights_mean_nll_is_ln_k():
    m = init_model(ModelSpec.softmax_regression(4, 10), RngStream(0), scale=0.0)
    d = _gaussian(50, 4, 10)
    assert mean_nll(m, d) == pytest.approx(math.log(10), abs=1e-12)
    assert mean_nll(m, d) == mean_nll(m, d)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 1000), st.data())
def test_bigram_lm_normalized(V, E, seed, data):
    m = init_model(ModelSpec.bigram_lm(V, E), RngStream(seed))
    token = data.draw(st.integers(0, V - 1))
    assert abs(np.exp(predict_log_probs(m, token)).sum() - 1) <= 1e-9


def test_predict_shape_mismatch():
    from preqinfo.numkit import ShapeError
    m = init_model(ModelSpec.mlp(3, 4, 2), RngStream(0))
    with pytest.raises(ShapeError):
        predict_log_probs(m, np.ones(5))


def test_true_bigram_nll_within_three_sigma_of_entropy():
    data, tm = gen_bigram_corpus(8, 8, 4000, 0.5, RngStream(3))
    model = _true_bigram_model(tm, 8)
    losses, _ = example_nll(model, data)
    H = true_conditional_entropy(tm)
    se = losses.std(ddof=1) / math.sqrt(len(losses))
    assert abs(losses.mean() - H) <= 3 * se


# training -------------------------------------------------------------------


def test_separable_data_fits_perfectly():
    gen = np.random.default_rng(0)
    X = gen.normal(size=(200, 2))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    X[:, 0] += np.where(y == 1, 0.5, -0.5)  # margin
    d = _data(X, y, 2)
    m = train(init_model(ModelSpec.softmax_regression(2, 2), RngStream(0)), d,
              TrainConfig(lr=0.05, max_epochs=300, patience=300))
    assert accuracy(m, d) == 1.0


def test_trained_point_more_likely_than_at_init():
    d = _gaussian(300)
    m0 = init_model(ModelSpec.mlp(4, 8, 3), RngStream(0))
    m1 = train(m0, d, TrainConfig(lr=0.01))
    x, y = d.inputs[0], d.labels[0]
    assert predict_log_probs(m1, x)[y] > predict_log_probs(m0, x)[y]


def test_max_epochs_zero_is_noop():
    m = init_model(ModelSpec.mlp(4, 8, 3), RngStream(0))
    out = train(m, _gaussian(), TrainConfig(max_epochs=0))
    np.testing.assert_array_equal(out.params.values, m.params.values)


def test_huge_penalty_freezes_at_anchor():
    m = init_model(ModelSpec.mlp(4, 8, 3), RngStream(0))
    anchor = m.params.values + 0.3
    pen = Penalty(anchor, np.ones_like(anchor), 1e9)
    out = train(m, _gaussian(), TrainConfig(lr=0.01, penalty=pen))
    assert np.max(np.abs(out.params.values - anchor)) <= 1e-3


def test_training_deterministic():
    m, d = init_model(ModelSpec.mlp(4, 8, 3), RngStream(0)), _gaussian()
    a = train(m, d, TrainConfig(lr=0.01), RngStream(5))
    b = train(m, d, TrainConfig(lr=0.01), RngStream(5))
    np.testing.assert_array_equal(a.params.values, b.params.values)


def test_returns_best_heldout_snapshot():
    m, d = init_model(ModelSpec.mlp(4, 8, 3), RngStream(0)), _gaussian(300)
    cfg = TrainConfig(lr=0.05, max_epochs=30)
    out = train(m, d, cfg)
    h = cfg.heldout_size(len(d))
    held = d[len(d) - h:]
    assert mean_nll(out, held) == pytest.approx(out.lineage[-1]["heldout_nll"], abs=1e-12)
    assert out.lineage[-1]["heldout_nll"] <= mean_nll(m, held)


def test_train_empty_data_rejected():
    m = init_model(ModelSpec.mlp(4, 8, 3), RngStream(0))
    with pytest.raises(ValueError):
        train(m, _gaussian()[:0], TrainConfig())


def test_incompatible_labels_rejected():
    m = init_model(ModelSpec.mlp(4, 8, 2), RngStream(0))
    with pytest.raises(IncompatibleError):
        mean_nll(m, _gaussian(K=3))


@pytest.mark.parametrize("heldout", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("n", [1, 2, 17, 400])
def test_heldout_leaves_training_examples(heldout, n):
    assert n - TrainConfig(heldout_fraction=heldout).heldout_size(n) >= 1


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40), st.floats(0.0, 1e3), st.integers(0, 100))
def test_penalty_gradient_matches_differences(size, c, seed):
    gen = np.random.default_rng(seed)
    pen = Penalty(gen.normal(size=size), gen.random(size), c)
    theta = gen.normal(size=size)
    assert rel_error(pen.grad(theta), numeric_grad(pen.value, theta, eps=1e-5)) <= 1e-4


@pytest.mark.parametrize("spec", [ModelSpec.softmax_regression(4, 3), ModelSpec.mlp(4, 5, 3)])
def test_nll_gradient_matches_differences(spec):
    m, d = init_model(spec, RngStream(2)), _gaussian(20)
    num = numeric_grad(lambda v: mean_nll(m.with_values(v), d), m.params.values.copy())
    assert rel_error(nll_grad(m, d), num) <= 1e-4


def test_bigram_gradient_matches_differences():
    d, _ = gen_bigram_corpus(5, 3, 30, 0.5, RngStream(1))
    m = init_model(ModelSpec.bigram_lm(5, 3), RngStream(2))
    num = numeric_grad(lambda v: mean_nll(m.with_values(v), d), m.params.values.copy())
    assert rel_error(nll_grad(m, d), num) <= 1e-4


# heads ----------------------------------------------------------------------


def _body(m):
    off, _ = m.head_slice
    return m.params.values[:off]


def test_separate_keeps_body_and_adds_head():
    m = train(init_model(ModelSpec.mlp(4, 8, 3), RngStream(0)).register("0"), _gaussian(), TrainConfig(lr=0.01))
    new = reset_head(m, "separate", "1", RngStream(1), k=3)
    np.testing.assert_array_equal(_body(new), _body(m))
    assert new.head == Head.block(3, 3)
    W_old, W_new = m.params.view("out.W"), new.params.view("out.W")
    np.testing.assert_array_equal(W_new[:3], W_old)
    assert not np.array_equal(W_new[3:], W_old)


def test_reuse_changes_nothing():
    m = init_model(ModelSpec.mlp(4, 8, 3), RngStream(0)).register("0")
    new = reset_head(m, "reuse", "1", RngStream(1))
    np.testing.assert_array_equal(new.params.values, m.params.values)


def test_union_of_two_three_class_tasks():
    m = init_model(ModelSpec.mlp(4, 8, 3), RngStream(0)).register("0")
    new = reset_head(m, "union", "1", RngStream(1), k=3)
    assert new.spec.n_out == 6
    assert (new.head.lo, new.head.hi) == (0, 6)
    np.testing.assert_array_equal(new.params.view("out.W")[:3], m.params.view("out.W"))
    np.testing.assert_array_equal(new.params.view("out.b")[:3], m.params.view("out.b"))
    assert new.head_for("0") == Head(0, 6, 0, 3)


def test_fresh_replaces_output_layer():
    m = init_model(ModelSpec.mlp(4, 8, 3), RngStream(0))
    new = reset_head(m, "fresh", "x", RngStream(1), k=5)
    assert new.spec.n_out == 5 and new.head == Head.block(0, 5)
    np.testing.assert_array_equal(_body(new), _body(m))


def test_unknown_strategy():
    with pytest.raises(ValueError):
        reset_head(init_model(ModelSpec.mlp(4, 8, 3), RngStream(0)), "bogus", "1", RngStream(1))


def test_head_param_mask_covers_rows():
    m = reset_head(init_model(ModelSpec.mlp(4, 8, 3), RngStream(0)).register("0"), "separate", "1", RngStream(1))
    mask = m.head_param_mask()
    assert mask.sum() == 3 * 8 + 3
    W = ParamVector(mask.astype(float), m.params.layout).view("out.W")
    assert W[3:].all() and not W[:3].any()


# checkpoints ----------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    m = reset_head(train(init_model(ModelSpec.mlp(4, 8, 3), RngStream(0)).register("0"), _gaussian(),
                         TrainConfig(lr=0.01)), "separate", "1", RngStream(1))
    save_checkpoint(m, tmp_path / "m.pqnf")
    back = load_checkpoint(tmp_path / "m.pqnf")
    np.testing.assert_array_equal(back.params.values, m.params.values)
    assert back.spec == m.spec and back.heads == m.heads and back.head == m.head
    assert back.checkpoint_id() == m.checkpoint_id()
    assert back.pretrained


def test_checkpoint_corruption_detected():
    raw = checkpoint_bytes(init_model(ModelSpec.mlp(2, 3, 2), RngStream(0)))
    with pytest.raises(CheckpointError):
        model_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        model_from_bytes(raw[:-8])
