import gzip
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from preqinfo.datakit import (DatasetError, IdxFormatError, LabeledDataset, TaskSpec, TrueModel, concat,
                              from_jsonl, gen_bigram_corpus, gen_hier_classification, load_idx, oracle_model_info,
                              permute_labels, randomize_labels, stationary_distribution, subtask, to_jsonl,
                              true_conditional_entropy, write_idx)
from preqinfo.numkit import RngStream


def _hier(n=600, sigma2=1.0, seed=0, cpc=3):
    return gen_hier_classification(2, cpc, 8, (4.0, 2.0), sigma2, n, RngStream(seed))


# bigram corpus ---------------------------------------------------------------


def test_m_zero_is_all_uniform():
    data, tm = gen_bigram_corpus(10, 0, 100, 0.1, RngStream(0))
    np.testing.assert_array_equal(tm.rows, np.full((10, 10), 0.1))
    assert oracle_model_info(tm) == 0.0
    assert data.K == 10


def test_bigram_frequencies_match_table():
    data, tm = gen_bigram_corpus(5, 5, 60000, 1.0, RngStream(1))
    x, y = data.inputs, data.labels
    for ctx in range(5):
        sel = y[x == ctx]
        freq = np.bincount(sel, minlength=5) / len(sel)
        sd = np.sqrt(tm.rows[ctx] * (1 - tm.rows[ctx]) / len(sel))
        assert np.all(np.abs(freq - tm.rows[ctx]) <= 3 * sd + 1e-12)


def test_contexts_follow_stationary_distribution():
    data, tm = gen_bigram_corpus(6, 6, 50000, 0.5, RngStream(2))
    freq = np.bincount(data.inputs, minlength=6) / len(data)
    sd = np.sqrt(tm.stationary * (1 - tm.stationary) / len(data))
    assert np.all(np.abs(freq - tm.stationary) <= 3 * sd + 1e-12)
    np.testing.assert_allclose(tm.stationary @ tm.rows, tm.stationary, atol=1e-10)


def test_bigram_invalid_arguments():
    with pytest.raises(DatasetError):
        gen_bigram_corpus(5, 6, 10)
    with pytest.raises(DatasetError):
        gen_bigram_corpus(5, 2, 0)


def test_bigram_reproducible():
    a, _ = gen_bigram_corpus(8, 3, 200, 0.1, RngStream(9))
    b, _ = gen_bigram_corpus(8, 3, 200, 0.1, RngStream(9))
    assert a.fingerprint() == b.fingerprint()


# hierarchical mixture --------------------------------------------------------


def test_hier_label_space():
    data, tm = _hier()
    assert data.K == 6 and tm.category_of == (0, 0, 0, 1, 1, 1)


def test_zero_variance_nearest_mean_is_perfect():
    data, tm = _hier(sigma2=0.0)
    d2 = ((data.inputs[:, None, :] - tm.means[None]) ** 2).sum(-1)
    assert np.all(np.argmin(d2, axis=1) == data.labels)


def test_within_category_means_are_close():
    _, tm = _hier()
    m = tm.means.reshape(2, 3, -1)
    # two offsets of norm 2 differ by at most 4
    within = np.linalg.norm(m[:, :, None] - m[:, None, :], axis=-1)
    assert within.max() <= 4.0 + 1e-12


def test_offset_rank_shares_subspace():
    _, tm = gen_hier_classification(2, 3, 8, (4.0, 2.0), 1.0, 10, RngStream(0), offset_rank=1)
    # with a rank-1 offset subspace, within-category differences are all parallel
    diffs = np.vstack([tm.means[1] - tm.means[0], tm.means[2] - tm.means[0], tm.means[4] - tm.means[3]])
    assert np.linalg.matrix_rank(diffs, tol=1e-9) == 1


# label transforms ------------------------------------------------------------


def test_identity_permutation_is_noop():
    data, _ = _hier()
    out = permute_labels(data, perm=range(data.K))
    np.testing.assert_array_equal(out.labels, data.labels)
    np.testing.assert_array_equal(out.inputs, data.inputs)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10000))
def test_permutation_then_inverse(seed):
    data, _ = _hier(100)
    out = permute_labels(data, RngStream(seed))
    perm = np.asarray(out.meta["label_permutation"])
    back = permute_labels(out, perm=np.argsort(perm))
    np.testing.assert_array_equal(back.labels, data.labels)


def test_permutation_must_be_bijective():
    data, _ = _hier(50)
    with pytest.raises(DatasetError):
        permute_labels(data, perm=[0, 0, 1, 2, 3, 4])


def test_randomize_single_class_unchanged():
    d = LabeledDataset(np.zeros((5, 2)), np.zeros(5, dtype=np.int64), 1, np.arange(5))
    assert randomize_labels(d, RngStream(0)) is d


def test_randomized_labels_uniform_and_independent():
    data, _ = _hier(30000)
    out = randomize_labels(data, RngStream(4))
    np.testing.assert_array_equal(out.inputs, data.inputs)
    counts = np.bincount(out.labels, minlength=6)
    p = 1 / 6
    assert np.all(np.abs(counts / len(out) - p) <= 3 * math.sqrt(p * (1 - p) / len(out)))
    joint = np.zeros((6, 6))
    np.add.at(joint, (data.labels, out.labels), 1)
    joint /= joint.sum()
    px, py = joint.sum(1), joint.sum(0)
    mi = float(np.sum(joint * np.log(joint / np.outer(px, py))))
    assert mi < 0.01  # plug-in bias is about 25 / (2 n) nats


def test_subtask_identity_filter():
    data, _ = _hier(200)
    out = subtask(data, TaskSpec.select("all", range(6)))
    np.testing.assert_array_equal(out.labels, data.labels)
    np.testing.assert_array_equal(out.order, data.order)


def test_category_task_has_k_categories():
    data, tm = _hier(300)
    out = subtask(data, TaskSpec.group("cat", tm.category_of))
    assert out.K == 2
    np.testing.assert_array_equal(out.labels, np.asarray(tm.category_of)[data.labels])


def test_subtask_preserves_order_and_relabels():
    data, _ = _hier(300)
    out = subtask(data, TaskSpec.select("b", [3, 4, 5]))
    keep = np.isin(data.labels, [3, 4, 5])
    np.testing.assert_array_equal(out.order, data.order[keep])
    np.testing.assert_array_equal(out.labels, data.labels[keep] - 3)


def test_subtask_invalid_remap():
    data, _ = _hier(50)
    with pytest.raises(DatasetError):
        subtask(data, TaskSpec("gap", ((0, 0), (1, 2))))
    with pytest.raises(DatasetError):
        subtask(data, TaskSpec("empty", ()))


def test_task_compose():
    outer = TaskSpec.select("x", [2, 3, 4])
    inner = TaskSpec.select("y", [1, 2])
    assert outer.compose(inner).remap == ((3, 0), (4, 1))


def test_concat_offsets_order():
    data, _ = _hier(40)
    both = concat([data[:10], data[10:]])
    assert len(both) == 40 and both.K == data.K


# ground-truth quantities -----------------------------------------------------


def test_entropy_of_uniform_bigram():
    _, tm = gen_bigram_corpus(20, 0, 10, 0.1, RngStream(0))
    assert true_conditional_entropy(tm) == pytest.approx(math.log(20), abs=1e-12)


def test_entropy_of_deterministic_rows():
    rows = np.roll(np.eye(4), 1, axis=1)
    tm = TrueModel("bigram-table", rows=rows, stationary=stationary_distribution(rows))
    assert true_conditional_entropy(tm) == 0.0


def test_oracle_info_is_sum_of_kl():
    _, tm = gen_bigram_corpus(6, 3, 10, 0.3, RngStream(5))
    kl = sum(sum(p * math.log(p * 6) for p in tm.rows[r] if p > 0) for r in tm.free_rows)
    assert oracle_model_info(tm) == pytest.approx(kl, rel=1e-12)


def test_mixture_entropy_bounded():
    _, tm = _hier()
    h, se = true_conditional_entropy(tm, 5000, return_stderr=True)
    assert 0 <= h <= math.log(6) and se > 0


# files -----------------------------------------------------------------------


def test_idx_round_trip(tmp_path):
    gen = np.random.default_rng(0)
    imgs = gen.integers(0, 256, size=(7, 3, 2), dtype=np.uint8)
    labels = np.array([0, 1, 2, 1, 0, 2, 2])
    write_idx(imgs, labels, tmp_path / "i.idx", tmp_path / "l.idx")
    d = load_idx(tmp_path / "i.idx", tmp_path / "l.idx")
    assert d.inputs.shape == (7, 6) and d.K == 3
    np.testing.assert_allclose(d.inputs, imgs.reshape(7, 6) / 255.0)
    np.testing.assert_array_equal(d.labels, labels)


def test_idx_gzip(tmp_path):
    imgs = np.zeros((2, 2, 2), dtype=np.uint8)
    write_idx(imgs, [1, 0], tmp_path / "i", tmp_path / "l")
    for name in ("i", "l"):
        (tmp_path / f"{name}.gz").write_bytes(gzip.compress((tmp_path / name).read_bytes()))
    assert len(load_idx(tmp_path / "i.gz", tmp_path / "l.gz")) == 2


def test_idx_bad_magic(tmp_path):
    (tmp_path / "i").write_bytes(struct.pack(">IIII", 0x0803 + 1, 1, 1, 1) + b"\0")
    (tmp_path / "l").write_bytes(struct.pack(">II", 0x0801, 1) + b"\0")
    with pytest.raises(IdxFormatError, match="magic"):
        load_idx(tmp_path / "i", tmp_path / "l")


def test_idx_count_mismatch(tmp_path):
    write_idx(np.zeros((3, 2, 2), dtype=np.uint8), [0, 1], tmp_path / "i", tmp_path / "l")
    with pytest.raises(IdxFormatError, match="count"):
        load_idx(tmp_path / "i", tmp_path / "l")


def test_idx_truncated(tmp_path):
    write_idx(np.zeros((3, 2, 2), dtype=np.uint8), [0, 1, 2], tmp_path / "i", tmp_path / "l")
    raw = (tmp_path / "i").read_bytes()
    (tmp_path / "i").write_bytes(raw[:-1])
    with pytest.raises(IdxFormatError, match="truncated"):
        load_idx(tmp_path / "i", tmp_path / "l")


def test_jsonl_round_trip(tmp_path):
    for data in (_hier(20)[0], gen_bigram_corpus(5, 2, 20, 0.1, RngStream(0))[0]):
        to_jsonl(data, tmp_path / "d.jsonl")
        back = from_jsonl(tmp_path / "d.jsonl", data.K)
        np.testing.assert_array_equal(back.inputs, data.inputs)
        np.testing.assert_array_equal(back.labels, data.labels)
        assert back.is_tokens == data.is_tokens
