"""Datasets with known generating distributions, label transforms, and IDX ingestion."""
from __future__ import annotations

import gzip
import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .numkit import RngStream


class DatasetError(ValueError):
    pass


class IdxFormatError(DatasetError):
    """Malformed or inconsistent IDX files."""


@dataclass(frozen=True)
class LabeledDataset:
    """Ordered (input, label) examples over a label space of size ``K``.

    ``inputs`` is ``(n, d)`` float features or ``(n,)`` integer context tokens.
    ``order`` holds, for each position, the index of the example in the raw
    generated sequence (the seeded shuffle applied at creation). ``blocks``
    optionally restricts each example's softmax to output rows ``[lo, hi)``
    when labels live in a shared multi-task row space; ``spans`` additionally
    makes an example's target a row range ``[lo, hi)`` whose probabilities are
    summed (a label that groups several rows).
    """

    inputs: np.ndarray
    labels: np.ndarray
    K: int
    order: np.ndarray
    meta: dict = field(default_factory=dict)
    blocks: Optional[np.ndarray] = None
    spans: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.labels)
        if len(self.inputs) != n or len(self.order) != n:
            raise DatasetError("inputs, labels and order must have equal length")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.K):
            raise DatasetError(f"labels must lie in [0, {self.K})")
        if self.blocks is not None and self.blocks.shape != (n, 2):
            raise DatasetError("blocks must have shape (n, 2)")
        if self.spans is not None and (self.blocks is None or self.spans.shape != (n, 2)):
            raise DatasetError("spans need blocks and must have shape (n, 2)")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, sl) -> "LabeledDataset":
        if not isinstance(sl, slice):
            raise TypeError("datasets support slicing only")
        return self.take(np.arange(len(self))[sl])

    def take(self, idx: np.ndarray) -> "LabeledDataset":
        return replace(self, inputs=self.inputs[idx], labels=self.labels[idx], order=self.order[idx],
                       blocks=None if self.blocks is None else self.blocks[idx],
                       spans=None if self.spans is None else self.spans[idx])

    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=10)
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        h.update(str(self.K).encode())
        if self.blocks is not None:
            h.update(np.ascontiguousarray(self.blocks, dtype="<i8").tobytes())
        if self.spans is not None:
            h.update(np.ascontiguousarray(self.spans, dtype="<i8").tobytes())
        return h.hexdigest()

    @property
    def is_tokens(self) -> bool:
        return self.inputs.ndim == 1


def _dataset(inputs, labels, K, gen: np.random.Generator, meta: dict, shuffle: bool = True) -> LabeledDataset:
    n = len(labels)
    order = gen.permutation(n) if shuffle else np.arange(n)
    return LabeledDataset(np.asarray(inputs)[order], np.asarray(labels, dtype=np.int64)[order], int(K), order, meta)


def concat(parts: Sequence[LabeledDataset], K: Optional[int] = None) -> LabeledDataset:
    blocks = None
    if any(p.blocks is not None for p in parts):
        blocks = np.concatenate([p.blocks for p in parts])
    spans = None
    if any(p.spans is not None for p in parts):
        spans = np.concatenate([p.spans if p.spans is not None else np.stack([p.labels, p.labels + 1], 1)
                                for p in parts])
    offset = 0
    orders = []
    for p in parts:
        orders.append(p.order + offset)
        offset += len(p)
    return LabeledDataset(
        np.concatenate([p.inputs for p in parts]),
        np.concatenate([p.labels for p in parts]),
        K or max(p.K for p in parts),
        np.concatenate(orders),
        {"concat": [p.meta.get("name", "") for p in parts]},
        blocks,
        spans,
    )


# ---------------------------------------------------------------------------
# Generating distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrueModel:
    """Known generating distribution of a synthetic dataset.

    ``bigram-table``: ``rows[x, y] = p(y | x)`` with a stationary context
    distribution. ``gaussian-mixture``: isotropic classes with shared variance.
    """

    kind: str
    rows: Optional[np.ndarray] = None
    free_rows: tuple[int, ...] = ()
    stationary: Optional[np.ndarray] = None
    means: Optional[np.ndarray] = None
    sigma2: float = 1.0
    category_of: tuple[int, ...] = ()
    priors: Optional[np.ndarray] = None

    def log_prob(self, inputs: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """log p(label | input) under the generating model (base label space)."""
        if self.kind == "bigram-table":
            with np.errstate(divide="ignore"):
                return np.log(self.rows[np.asarray(inputs), np.asarray(labels)])
        lp = self.log_posterior(inputs)
        return lp[np.arange(len(labels)), labels]

    def log_posterior(self, X: np.ndarray) -> np.ndarray:
        if self.kind != "gaussian-mixture":
            raise TypeError("posterior over classes needs a gaussian-mixture model")
        X = np.asarray(X, dtype=np.float64)
        d2 = ((X[:, None, :] - self.means[None]) ** 2).sum(-1)
        z = -d2 / (2 * self.sigma2) + np.log(self.priors)
        z -= z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def sample(self, n: int, gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "bigram-table":
            V = self.rows.shape[0]
            x = gen.choice(V, size=n, p=self.stationary)
            cum = np.cumsum(self.rows, axis=1)
            cum[:, -1] = 1.0
            u = gen.random(n)
            y = np.minimum((u[:, None] > cum[x]).sum(axis=1), V - 1)
            return x.astype(np.int64), y.astype(np.int64)
        C, d = self.means.shape
        y = gen.choice(C, size=n, p=self.priors)
        X = self.means[y] + np.sqrt(self.sigma2) * gen.standard_normal((n, d))
        return X, y.astype(np.int64)


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    V = P.shape[0]
    A = np.vstack([P.T - np.eye(V), np.ones((1, V))])
    b = np.zeros(V + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def gen_bigram_corpus(V: int, m: int, n: int, alpha: float = 0.1,
                      rng: Optional[RngStream] = None) -> tuple[LabeledDataset, TrueModel]:
    """Corpus of (context, next-token) pairs from a 2-gram table with ``m`` Dirichlet rows.

    The other ``V - m`` rows are uniform. Pairs are drawn independently from
    the chain's stationary pair distribution, then put in a seeded order.
    """
    if not 0 <= m <= V or V < 1:
        raise DatasetError(f"need 0 <= m <= V, got m={m}, V={V}")
    if n < 1:
        raise DatasetError("n must be >= 1")
    if not alpha > 0:
        raise DatasetError("Dirichlet concentration must be positive")
    rng = rng or RngStream(0)
    gen_t = rng.child("table").generator()
    rows = np.full((V, V), 1.0 / V)
    free = np.sort(gen_t.choice(V, size=m, replace=False)) if m else np.zeros(0, dtype=int)
    if m:
        draws = gen_t.dirichlet(np.full(V, alpha), size=m)
        rows[free] = draws / draws.sum(axis=1, keepdims=True)
    tm = TrueModel("bigram-table", rows=rows, free_rows=tuple(int(r) for r in free),
                   stationary=stationary_distribution(rows))
    gen = rng.child("sample").generator()
    x, y = tm.sample(n, gen)
    meta = {"generator": "bigram", "V": V, "m": m, "n": n, "alpha": alpha, "seed": rng.describe()}
    return _dataset(x, y, V, gen, meta), tm


def gen_hier_classification(categories: int, classes_per_cat, d_in: int, separation: tuple[float, float],
                            sigma2: float, n: int, rng: Optional[RngStream] = None,
                            offset_rank: Optional[int] = None) -> tuple[LabeledDataset, TrueModel]:
    """Isotropic Gaussian classes arranged in categories.

    A class mean is its category mean (norm ``separation[0]``) plus a class
    offset (norm ``separation[1]``). With ``offset_rank`` set, all offsets lie
    in one shared random subspace of that dimension, so within-category tasks
    share structure across categories.
    """
    if isinstance(classes_per_cat, int):
        classes_per_cat = [classes_per_cat] * categories
    classes_per_cat = [int(c) for c in classes_per_cat]
    if categories < 1 or len(classes_per_cat) != categories or min(classes_per_cat) < 1 or d_in < 1 or n < 1:
        raise DatasetError("counts must be >= 1 and match the number of categories")
    big, small = separation
    if not big > small > 0:
        raise DatasetError("need between-category separation > within-category separation > 0")
    if sigma2 < 0:
        raise DatasetError("variance must be non-negative")
    rng = rng or RngStream(0)
    gen_g = rng.child("geometry").generator()

    def unit(v):
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    cat_means = big * unit(gen_g.standard_normal((categories, d_in)))
    r = d_in if offset_rank is None else int(offset_rank)
    basis = np.linalg.qr(gen_g.standard_normal((d_in, d_in)))[0][:, :r]
    means, category_of = [], []
    for c, nc in enumerate(classes_per_cat):
        offs = unit(gen_g.standard_normal((nc, r)) @ basis.T)
        means.append(cat_means[c] + small * offs)
        category_of += [c] * nc
    means = np.vstack(means)
    C = len(category_of)
    tm = TrueModel("gaussian-mixture", means=means, sigma2=float(max(sigma2, 1e-300)),
                   category_of=tuple(category_of), priors=np.full(C, 1.0 / C))
    gen = rng.child("sample").generator()
    if sigma2 == 0:
        y = gen.choice(C, size=n)
        X = means[y].copy()
    else:
        X, y = tm.sample(n, gen)
    meta = {"generator": "hier", "categories": categories, "classes_per_cat": classes_per_cat,
            "d_in": d_in, "separation": [big, small], "sigma2": sigma2, "n": n,
            "offset_rank": r, "category_of": category_of, "seed": rng.describe()}
    return _dataset(X, y, C, gen, meta), tm


# ---------------------------------------------------------------------------
# Label transforms and subtasks
# ---------------------------------------------------------------------------


def permute_labels(data: LabeledDataset, rng: Optional[RngStream] = None,
                   perm: Optional[Sequence[int]] = None) -> LabeledDataset:
    """Relabel every example through one global permutation of the label space."""
    if data.K < 2:
        raise DatasetError("permuting labels needs K >= 2")
    if perm is None:
        perm = (rng or RngStream(0)).generator().permutation(data.K)
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(data.K)):
        raise DatasetError("perm is not a permutation of the label space")
    meta = dict(data.meta, label_permutation=perm.tolist())
    return replace(data, labels=perm[data.labels], meta=meta)


def randomize_labels(data: LabeledDataset, rng: Optional[RngStream] = None) -> LabeledDataset:
    """Replace every label with an independent uniform draw; inputs stay untouched."""
    if data.K < 2:
        return data
    gen = (rng or RngStream(0)).generator()
    labels = gen.integers(0, data.K, size=len(data))
    return replace(data, labels=labels.astype(np.int64), meta=dict(data.meta, random_labels=True))


@dataclass(frozen=True)
class TaskSpec:
    """Keep examples whose label is in ``remap`` and relabel them by it.

    The remap must cover ``0..K'-1``; several source labels may share one
    target (e.g. a category task over class labels).
    """

    name: str
    remap: tuple[tuple[int, int], ...]

    @classmethod
    def select(cls, name: str, classes: Sequence[int]) -> "TaskSpec":
        return cls(name, tuple((int(c), i) for i, c in enumerate(sorted(classes))))

    @classmethod
    def group(cls, name: str, groups: Sequence[int]) -> "TaskSpec":
        """Map source label ``i`` to ``groups[i]``."""
        return cls(name, tuple((i, int(g)) for i, g in enumerate(groups)))

    @property
    def filter(self) -> frozenset:
        return frozenset(a for a, _ in self.remap)

    @property
    def K(self) -> int:
        return len({b for _, b in self.remap})

    def validate(self):
        if not self.remap:
            raise DatasetError(f"task {self.name!r} has an empty class filter")
        targets = sorted({b for _, b in self.remap})
        if targets != list(range(len(targets))):
            raise DatasetError(f"task {self.name!r} remap does not cover 0..K'-1")
        if len({a for a, _ in self.remap}) != len(self.remap):
            raise DatasetError(f"task {self.name!r} maps a label twice")

    def compose(self, inner: "TaskSpec") -> "TaskSpec":
        """The task equivalent to applying ``self`` and then ``inner``."""
        second = dict(inner.remap)
        pairs = tuple((a, second[b]) for a, b in self.remap if b in second)
        return TaskSpec(f"{self.name}/{inner.name}", pairs)


def subtask(data: LabeledDataset, spec: TaskSpec) -> LabeledDataset:
    spec.validate()
    lut = np.full(data.K, -1, dtype=np.int64)
    for a, b in spec.remap:
        if 0 <= a < data.K:
            lut[a] = b
    keep = np.nonzero(lut[data.labels] >= 0)[0]
    if len(keep) == 0:
        raise DatasetError(f"task {spec.name!r} selects no examples")
    out = data.take(keep)
    return replace(out, labels=lut[out.labels], K=spec.K, meta=dict(data.meta, task=spec.name))


# ---------------------------------------------------------------------------
# Ground-truth quantities
# ---------------------------------------------------------------------------


def _entropy_rows(P: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(P > 0, P * np.log(P), 0.0)
    return -t.sum(axis=-1)


def true_conditional_entropy(tm: TrueModel, samples: int = 20000, rng: Optional[RngStream] = None,
                             return_stderr: bool = False):
    """H(Y|X) in nats: exact for bigram tables, Monte-Carlo for mixtures."""
    if tm.kind == "bigram-table":
        value = float(np.dot(tm.stationary, _entropy_rows(tm.rows)))
        return (value, 0.0) if return_stderr else value
    gen = (rng or RngStream(0, ("entropy",))).generator()
    X, _ = tm.sample(samples, gen)
    lp = tm.log_posterior(X)
    h = -(np.exp(lp) * lp).sum(axis=1)
    value, se = float(h.mean()), float(h.std(ddof=1) / np.sqrt(samples))
    return (value, se) if return_stderr else value


def oracle_model_info(tm: TrueModel) -> float:
    """Sum over the Dirichlet rows of KL(row || uniform), in nats."""
    if tm.kind != "bigram-table":
        raise TypeError("oracle_model_info is defined for bigram tables only")
    V = tm.rows.shape[1]
    if not tm.free_rows:
        return 0.0
    return float(np.sum(np.log(V) - _entropy_rows(tm.rows[list(tm.free_rows)])))


def bayes_error(tm: TrueModel, groups: Optional[Sequence[int]] = None, classes: Optional[Sequence[int]] = None,
                samples: int = 20000, rng: Optional[RngStream] = None) -> float:
    """Monte-Carlo Bayes error of a mixture task.

    ``groups`` maps classes to task labels (e.g. categories); ``classes``
    restricts the task to a subset of source classes.
    """
    C = len(tm.means)
    classes = list(range(C)) if classes is None else list(classes)
    groups = np.arange(C) if groups is None else np.asarray(groups)
    pri = np.zeros(C)
    pri[classes] = 1.0 / len(classes)
    sub = replace(tm, priors=pri)
    gen = (rng or RngStream(0, ("bayes",))).generator()
    X, y = sub.sample(samples, gen)
    post = np.exp(sub_log_posterior(sub, X, classes))
    G = groups.max() + 1
    gpost = np.zeros((len(X), G))
    for c in classes:
        gpost[:, groups[c]] += post[:, c]
    return float(np.mean(np.argmax(gpost, axis=1) != groups[y]))


def sub_log_posterior(tm: TrueModel, X: np.ndarray, classes: Sequence[int]) -> np.ndarray:
    with np.errstate(divide="ignore"):
        X = np.asarray(X, dtype=np.float64)
        d2 = ((X[:, None, :] - tm.means[None]) ** 2).sum(-1)
        z = -d2 / (2 * tm.sigma2) + np.log(tm.priors)
    mask = np.zeros(len(tm.means), dtype=bool)
    mask[list(classes)] = True
    z = np.where(mask, z, -np.inf)
    z -= z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# IDX and JSON-lines
# ---------------------------------------------------------------------------


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, magic: int, what: str) -> np.ndarray:
    if len(raw) < 4:
        raise IdxFormatError(f"{what}: truncated header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IdxFormatError(f"{what}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    hdr = 4 + 4 * ndim
    if len(raw) < hdr:
        raise IdxFormatError(f"{what}: truncated dimension header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:hdr])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) < hdr + count:
        raise IdxFormatError(f"{what}: truncated payload ({len(raw) - hdr} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=hdr).reshape(dims)


def load_idx(images_path, labels_path, K: Optional[int] = None) -> LabeledDataset:
    """Read an MNIST-style image/label IDX pair; pixels are scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), 0x00000803, "images")
    labels = _parse_idx(_read_bytes(labels_path), 0x00000801, "labels").astype(np.int64)
    if len(images) != len(labels):
        raise IdxFormatError(f"image count {len(images)} != label count {len(labels)}")
    X = images.reshape(len(images), -1).astype(np.float64) / 255.0
    K = K or (int(labels.max()) + 1 if len(labels) else 1)
    meta = {"generator": "idx", "images": str(images_path), "labels": str(labels_path),
            "shape": list(images.shape[1:])}
    return LabeledDataset(X, labels, K, np.arange(len(labels)), meta)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, len(labels)))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def to_jsonl(data: LabeledDataset, path) -> None:
    with open(path, "w") as fh:
        for x, y in zip(data.inputs, data.labels):
            fh.write(json.dumps({"input": np.asarray(x).tolist(), "label": int(y)}) + "\n")


def from_jsonl(path, K: Optional[int] = None) -> LabeledDataset:
    xs, ys = [], []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                xs.append(rec["input"])
                ys.append(rec["label"])
    X = np.asarray(xs)
    if X.ndim == 1:
        X = X.astype(np.int64)
    y = np.asarray(ys, dtype=np.int64)
    return LabeledDataset(X, y, K or int(y.max()) + 1, np.arange(len(y)), {"generator": "jsonl", "path": str(path)})
