"""Categorical predictive models p(y|x) and their training loop.

Three architectures share one flat parameter vector convention: body tensors
first, the final affine layer (``out.W``, ``out.b``) last, so the output layer
is always one contiguous slice. The output layer may carry more rows than the
current task has labels; a :class:`Head` selects which rows form the softmax.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

from .numkit import (
    Layout,
    LabelError,
    OptimizerState,
    ParamVector,
    RngStream,
    ShapeError,
    _step_inplace,
    affine_backward,
    affine_forward,
    batch_nll,
    embedding_backward,
    embedding_forward,
    log_softmax,
    tanh_backward,
    tanh_forward,
)

if TYPE_CHECKING:
    from .datakit import LabeledDataset

KINDS = ("softmax-regression", "mlp", "bigram-lm")
HEAD_STRATEGIES = ("separate", "union", "reuse", "fresh")

CHECKPOINT_MAGIC = b"PQNF"
CHECKPOINT_VERSION = 1


class IncompatibleError(ValueError):
    """Model and data (or two models) cannot be combined."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor.

    ``d_in`` is the feature dimension, or the vocabulary size for ``bigram-lm``.
    ``hidden`` is the hidden width for ``mlp`` and the embedding width for
    ``bigram-lm``. ``n_out`` counts output rows, which can exceed one task's
    label count when several task heads share the output layer.
    """

    kind: str
    d_in: int
    n_out: int
    hidden: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.d_in < 1 or self.n_out < 1:
            raise ValueError("d_in and n_out must be positive")
        if self.kind in ("mlp", "bigram-lm") and self.hidden < 1:
            raise ValueError(f"{self.kind} needs hidden >= 1")
        if self.kind == "bigram-lm" and self.n_out < self.d_in:
            raise ValueError("bigram-lm predicts over its own vocabulary (K = V)")

    @classmethod
    def softmax_regression(cls, d_in: int, K: int) -> "ModelSpec":
        return cls("softmax-regression", d_in, K)

    @classmethod
    def mlp(cls, d_in: int, hidden: int, K: int) -> "ModelSpec":
        return cls("mlp", d_in, K, hidden)

    @classmethod
    def bigram_lm(cls, V: int, embed_dim: int) -> "ModelSpec":
        return cls("bigram-lm", V, V, embed_dim)

    @property
    def width(self) -> int:
        """Input width of the output layer."""
        return self.d_in if self.kind == "softmax-regression" else self.hidden

    def layout(self) -> Layout:
        shapes: list[tuple[str, tuple[int, ...]]] = []
        if self.kind == "mlp":
            shapes += [("hidden.W", (self.hidden, self.d_in)), ("hidden.b", (self.hidden,))]
        elif self.kind == "bigram-lm":
            shapes += [("embed.E", (self.d_in, self.hidden))]
        shapes += [("out.W", (self.n_out, self.width)), ("out.b", (self.n_out,))]
        return Layout.from_shapes(shapes)

    @property
    def param_count(self) -> int:
        return self.layout().size

    def with_outputs(self, n_out: int) -> "ModelSpec":
        return replace(self, n_out=n_out)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "d_in": self.d_in, "n_out": self.n_out, "hidden": self.hidden}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["kind"], int(d["d_in"]), int(d["n_out"]), int(d.get("hidden", 0)))


@dataclass(frozen=True)
class Head:
    """Softmax over output rows ``[lo, hi)``; local label ``y`` lives at row ``offset + y``."""

    lo: int
    hi: int
    offset: int
    k: int

    @classmethod
    def block(cls, offset: int, k: int) -> "Head":
        return cls(offset, offset + k, offset, k)

    def as_block(self) -> "Head":
        return Head.block(self.offset, self.k)

    def to_list(self) -> list[int]:
        return [self.lo, self.hi, self.offset, self.k]


@dataclass(frozen=True)
class ModelState:
    spec: ModelSpec
    params: ParamVector
    head: Head
    heads: tuple[tuple[str, Head], ...] = ()
    init_seed: int = 0
    lineage: tuple[dict, ...] = ()

    @property
    def head_slice(self) -> tuple[int, int]:
        off, _ = self.params.layout.slot("out.W")
        return off, len(self.params) - off

    @property
    def param_count(self) -> int:
        return len(self.params)

    @property
    def pretrained(self) -> bool:
        return any(ev.get("event") in ("train", "merge") for ev in self.lineage)

    @property
    def K(self) -> int:
        return self.head.k

    def with_values(self, values: np.ndarray, event: Optional[dict] = None) -> "ModelState":
        lineage = self.lineage + ((event,) if event else ())
        return replace(self, params=ParamVector(values, self.params.layout), lineage=lineage)

    def head_for(self, task_id: str) -> Head:
        for name, h in self.heads:
            if name == str(task_id):
                return h
        raise KeyError(f"no head registered for task {task_id!r}")

    def select(self, task_id: str, block: bool = False) -> "ModelState":
        """Activate a registered task head (``block`` restricts a union head to the task's rows)."""
        h = self.head_for(task_id)
        return replace(self, head=h.as_block() if block else h)

    def with_head(self, head: Head) -> "ModelState":
        if not (0 <= head.lo <= head.offset and head.offset + head.k <= head.hi <= self.spec.n_out):
            raise ValueError(f"head {head} outside output rows of {self.spec}")
        return replace(self, head=head)

    def register(self, task_id: str, head: Optional[Head] = None) -> "ModelState":
        head = head or self.head
        heads = tuple((n, h) for n, h in self.heads if n != str(task_id)) + ((str(task_id), head),)
        return replace(self, heads=heads, head=head)

    def checkpoint_id(self) -> str:
        h = hashlib.blake2b(digest_size=8)
        h.update(json.dumps(self.spec.to_dict(), sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.params.values, dtype="<f8").tobytes())
        return h.hexdigest()

    def head_param_mask(self, head: Optional[Head] = None) -> np.ndarray:
        """Boolean mask over the flat parameters selecting the output rows of ``head``."""
        head = head or self.head
        mask = np.zeros(len(self.params), dtype=bool)
        off_w, (R, w) = self.params.layout.slot("out.W")
        off_b, _ = self.params.layout.slot("out.b")
        mask[off_w + head.lo * w: off_w + head.hi * w] = True
        mask[off_b + head.lo: off_b + head.hi] = True
        return mask


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def _fresh_values(spec: ModelSpec, gen: np.random.Generator, scale: float) -> ParamVector:
    pv = ParamVector(np.zeros(spec.param_count), spec.layout())
    if spec.kind == "mlp":
        a = scale * np.sqrt(3.0 / spec.d_in)
        pv.view("hidden.W")[...] = gen.uniform(-a, a, size=(spec.hidden, spec.d_in))
    elif spec.kind == "bigram-lm":
        a = scale * np.sqrt(3.0 / spec.hidden)
        pv.view("embed.E")[...] = gen.uniform(-a, a, size=(spec.d_in, spec.hidden))
    pv.view("out.W")[...] = _out_rows(spec, spec.n_out, gen, scale)
    return pv


def _out_rows(spec: ModelSpec, rows: int, gen: np.random.Generator, scale: float) -> np.ndarray:
    # output layer starts small so the initial predictive distribution is near uniform
    a = 0.1 * scale * np.sqrt(3.0 / spec.width)
    return gen.uniform(-a, a, size=(rows, spec.width))


def init_model(spec: ModelSpec, rng: RngStream, scale: float = 1.0) -> ModelState:
    """Scaled-uniform initialization; ``scale=0`` gives the all-zero (uniform-predicting) model."""
    pv = _fresh_values(spec, rng.generator(), scale)
    return ModelState(spec, pv, Head.block(0, spec.n_out), (), int(rng.seed))


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _check_inputs(spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    if spec.kind == "bigram-lm":
        if X.ndim != 1 or not np.issubdtype(X.dtype, np.integer):
            raise ShapeError("bigram-lm expects a 1-D array of context token ids")
    elif X.ndim != 2 or X.shape[1] != spec.d_in:
        raise ShapeError(f"expected inputs of shape (n, {spec.d_in}), got {X.shape}")
    return X


def forward(spec: ModelSpec, pv: ParamVector, X: np.ndarray):
    """Logits over all output rows for a batch, plus the cache needed by :func:`backward`."""
    W = pv.view("out.W")
    b = pv.view("out.b")
    if spec.kind == "softmax-regression":
        return affine_forward(X, W, b), (X, X)
    if spec.kind == "mlp":
        h = tanh_forward(affine_forward(X, pv.view("hidden.W"), pv.view("hidden.b")))
        return affine_forward(h, W, b), (X, h)
    e = embedding_forward(X, pv.view("embed.E"))
    return affine_forward(e, W, b), (X, e)


def backward(spec: ModelSpec, pv: ParamVector, cache, g: np.ndarray) -> np.ndarray:
    """Flat gradient of ``sum(g * logits)`` with respect to all parameters."""
    X, a = cache
    out = np.empty(len(pv))
    grads = ParamVector(out, pv.layout)
    da, dW, db = affine_backward(a, pv.view("out.W"), g)
    grads.view("out.W")[...] = dW
    grads.view("out.b")[...] = db
    if spec.kind == "mlp":
        dz = tanh_backward(a, da)
        _, dW1, db1 = affine_backward(X, pv.view("hidden.W"), dz)
        grads.view("hidden.W")[...] = dW1
        grads.view("hidden.b")[...] = db1
    elif spec.kind == "bigram-lm":
        grads.view("embed.E")[...] = embedding_backward(X, pv.view("embed.E").shape, da)
    return out


def backward_sq(spec: ModelSpec, pv: ParamVector, cache, g: np.ndarray) -> np.ndarray:
    """Sum over examples of the *squared* per-example gradients (diagonal Fisher numerator)."""
    X, a = cache
    out = np.empty(len(pv))
    grads = ParamVector(out, pv.layout)
    g2 = g * g
    grads.view("out.W")[...] = g2.T @ (a * a)
    grads.view("out.b")[...] = g2.sum(axis=0)
    da = g @ pv.view("out.W")
    if spec.kind == "mlp":
        dz = tanh_backward(a, da)
        dz2 = dz * dz
        grads.view("hidden.W")[...] = dz2.T @ (np.asarray(X, dtype=np.float64) ** 2)
        grads.view("hidden.b")[...] = dz2.sum(axis=0)
    elif spec.kind == "bigram-lm":
        grads.view("embed.E")[...] = embedding_backward(X, pv.view("embed.E").shape, da * da)
    return out


@dataclass
class _Targets:
    X: np.ndarray
    rows: np.ndarray
    mask: Optional[np.ndarray]  # per-example row mask, only when the data carries blocks
    lo: int
    hi: int
    row_end: Optional[np.ndarray] = None  # target row ranges, only when the data carries spans

    def take(self, idx: np.ndarray) -> "_Targets":
        return _Targets(self.X[idx], self.rows[idx], None if self.mask is None else self.mask[idx], self.lo, self.hi,
                        None if self.row_end is None else self.row_end[idx])


def _targets(model: ModelState, data: "LabeledDataset") -> _Targets:
    X = _check_inputs(model.spec, data.inputs)
    if data.blocks is not None:
        R = model.spec.n_out
        if data.blocks.max(initial=0) > R or data.labels.max(initial=0) >= R:
            raise IncompatibleError("data blocks exceed the model's output rows")
        cols = np.arange(R)
        mask = (cols >= data.blocks[:, :1]) & (cols < data.blocks[:, 1:])
        if data.spans is not None:
            if data.spans.max(initial=0) > R:
                raise IncompatibleError("data spans exceed the model's output rows")
            return _Targets(X, data.spans[:, 0].copy(), mask, 0, R, data.spans[:, 1].copy())
        return _Targets(X, data.labels, mask, 0, R)
    h = model.head
    if data.K > h.k:
        raise IncompatibleError(f"data has K={data.K} labels but the active head has {h.k}")
    if len(data.labels) and data.labels.max() >= h.k:
        raise LabelError("label outside the head's label space")
    return _Targets(X, h.offset - h.lo + data.labels, None, h.lo, h.hi)


def _losses(spec: ModelSpec, pv: ParamVector, t: _Targets, need_grad: bool = True):
    logits, cache = forward(spec, pv, t.X)
    sub = logits[:, t.lo:t.hi]
    mask = None if t.mask is None else t.mask[:, t.lo:t.hi]
    losses, g, clamps = batch_nll(sub, t.rows, mask, t.row_end)
    if not need_grad:
        return losses, None, clamps, cache
    if t.lo == 0 and t.hi == spec.n_out:
        gfull = g
    else:
        gfull = np.zeros_like(logits)
        gfull[:, t.lo:t.hi] = g
    return losses, gfull, clamps, cache


def example_nll(model: ModelState, data: "LabeledDataset") -> tuple[np.ndarray, int]:
    """Per-example clamped NLL in nats and the number of clamped predictions."""
    if len(data) == 0:
        return np.zeros(0), 0
    losses, _, clamps, _ = _losses(model.spec, model.params, _targets(model, data), need_grad=False)
    return losses, clamps


def mean_nll(model: ModelState, data: "LabeledDataset") -> float:
    if len(data) == 0:
        raise ValueError("mean_nll on empty data")
    losses, _ = example_nll(model, data)
    return float(losses.mean())


def nll_grad(model: ModelState, data: "LabeledDataset") -> np.ndarray:
    """Gradient of the mean NLL over ``data`` with respect to the flat parameters."""
    t = _targets(model, data)
    _, g, _, cache = _losses(model.spec, model.params, t)
    return backward(model.spec, model.params, cache, g) / len(data)


def predict_log_probs(model: ModelState, x) -> np.ndarray:
    """Log-probabilities over the active head's softmax rows for one input."""
    X = np.asarray(x)[None] if model.spec.kind != "bigram-lm" else np.asarray([int(x)])
    _check_inputs(model.spec, X)
    logits, _ = forward(model.spec, model.params, X)
    return log_softmax(logits[0, model.head.lo:model.head.hi])


def accuracy(model: ModelState, data: "LabeledDataset") -> float:
    """Fraction of examples whose label row has the largest logit within the active head."""
    t = _targets(model, data)
    logits, _ = forward(model.spec, model.params, t.X)
    sub = logits[:, t.lo:t.hi]
    if t.mask is not None:
        sub = np.where(t.mask[:, t.lo:t.hi], sub, -np.inf)
    pred = np.argmax(sub, axis=1)
    if t.row_end is not None:
        return float(np.mean((pred >= t.rows) & (pred < t.row_end)))
    return float(np.mean(pred == t.rows))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Penalty:
    """Quadratic anchor ``(c/2) * sum(weights * (theta - anchor)**2)``."""

    anchor: np.ndarray
    weights: np.ndarray
    c: float

    def __post_init__(self):
        if not np.isfinite(self.c) or self.c < 0:
            raise ValueError("penalty coefficient must be finite and >= 0")
        if self.anchor.shape != self.weights.shape:
            raise ShapeError("anchor and weights differ in shape")

    def value(self, theta: np.ndarray) -> float:
        d = theta - self.anchor
        return 0.5 * self.c * float(np.sum(self.weights * d * d))

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return self.c * self.weights * (theta - self.anchor)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 5
    heldout_fraction: float = 0.1
    min_heldout: int = 16
    min_delta: float = 1e-4
    penalty: Optional[Penalty] = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.heldout_fraction < 1.0:
            raise ValueError("heldout_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("invalid batch size, epoch budget or patience")

    def heldout_size(self, n: int) -> int:
        """Size of the early-stopping slice carved from the end of ``n`` examples."""
        h = max(self.min_heldout, int(np.ceil(self.heldout_fraction * n)))
        return min(h, n // 2)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "penalty"}
        d["penalty_c"] = None if self.penalty is None else self.penalty.c
        return d


def train(model: ModelState, data: "LabeledDataset", cfg: TrainConfig,
          rng: Optional[RngStream] = None, trainable: Optional[np.ndarray] = None) -> ModelState:
    """Minibatch training with early stopping on a heldout tail of ``data``.

    Returns the parameters with the best heldout NLL seen (the starting point
    counts as epoch 0). A penalty is applied as an exact proximal step after
    each optimizer update, so arbitrarily large coefficients stay stable.
    ``trainable`` optionally masks which parameters may move.
    """
    n = len(data)
    if n == 0:
        raise ValueError("train on empty data")
    tgt = _targets(model, data)
    spec = model.spec
    h = cfg.heldout_size(n)
    train_t = tgt.take(np.arange(n - h))
    held_t = tgt.take(np.arange(n - h, n)) if h else train_t
    rng = rng or RngStream(cfg.seed, ("train",))
    gen = rng.generator()

    theta = model.params.values.copy()
    pv = ParamVector(theta, model.params.layout)
    best = theta.copy()

    def held_nll() -> float:
        return float(_losses(spec, pv, held_t, need_grad=False)[0].mean())

    best_nll = held_nll()
    event = {"event": "train", "n": n, "heldout": h, "epochs": 0, "best_epoch": 0,
             "heldout_nll": best_nll, "stream": rng.describe()}
    if cfg.max_epochs == 0 or cfg.lr == 0.0:
        return model.with_values(best, event)

    pen = cfg.penalty
    if pen is not None and pen.c > 0:
        if pen.anchor.shape != theta.shape:
            raise ShapeError("penalty anchor does not match the parameter vector")
        step_c = cfg.lr * pen.c * pen.weights
        if trainable is not None:
            step_c = np.where(trainable, step_c, 0.0)
        prox_denom = 1.0 + step_c
        prox_shift = step_c * pen.anchor
    else:
        prox_denom = None

    opt = OptimizerState(cfg.optimizer, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps).reset(len(theta))
    m_train = n - h
    bs = min(cfg.batch_size, m_train)
    bad = 0
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = gen.permutation(m_train)
        for start in range(0, m_train, bs):
            bt = train_t.take(perm[start:start + bs])
            _, g, _, cache = _losses(spec, pv, bt)
            grad = backward(spec, pv, cache, g)
            grad /= len(bt.rows)
            if trainable is not None:
                grad[~trainable] = 0.0
            _step_inplace(theta, grad, opt)
            if prox_denom is not None:
                theta += prox_shift
                theta /= prox_denom
        cur = held_nll()
        if cur < best_nll - cfg.min_delta:
            best_nll = cur
            best[...] = theta
            event["best_epoch"] = epoch
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    event["epochs"] = epoch
    event["heldout_nll"] = best_nll
    return model.with_values(best, event)


def penalized_loss(model: ModelState, data: "LabeledDataset", penalty: Penalty) -> float:
    return mean_nll(model, data) + penalty.value(model.params.values)


# ---------------------------------------------------------------------------
# Heads
# ---------------------------------------------------------------------------


def _grow_outputs(model: ModelState, k: int, gen: np.random.Generator) -> ModelState:
    R = model.spec.n_out
    spec = model.spec.with_outputs(R + k)
    pv = model.params.remap(spec.layout())
    pv.view("out.W")[R:] = _out_rows(spec, k, gen, 1.0)
    return replace(model, spec=spec, params=pv)


def reset_head(model: ModelState, strategy: str, task_id, rng: RngStream, k: Optional[int] = None) -> ModelState:
    """Prepare the output layer for a new task.

    ``separate`` appends a fresh block of rows for the task (re-selecting it if
    the task already has one), ``union`` appends rows but keeps the softmax over
    every row seen so far, ``reuse`` keeps the current rows untouched, and
    ``fresh`` replaces the whole output layer with a newly initialized one.
    """
    task_id = str(task_id)
    k = int(k or model.head.k)
    gen = rng.generator()
    if strategy == "separate":
        try:
            return model.select(task_id)
        except KeyError:
            pass
        R = model.spec.n_out
        grown = _grow_outputs(model, k, gen)
        return grown.register(task_id, Head.block(R, k))
    if strategy == "union":
        try:
            return model.select(task_id)
        except KeyError:
            pass
        R = model.spec.n_out
        grown = _grow_outputs(model, k, gen)
        total = R + k
        heads = tuple((n, Head(0, total, h.offset, h.k)) for n, h in grown.heads)
        grown = replace(grown, heads=heads)
        return grown.register(task_id, Head(0, total, R, k))
    if strategy == "reuse":
        if k > model.spec.n_out:
            raise IncompatibleError("reuse strategy cannot host more labels than the existing head")
        return model.register(task_id, Head.block(0, k))
    if strategy == "fresh":
        spec = model.spec.with_outputs(k)
        pv = model.params.remap(spec.layout())
        pv.view("out.W")[...] = _out_rows(spec, k, gen, 1.0)
        pv.view("out.b")[...] = 0.0
        fresh = replace(model, spec=spec, params=pv, heads=(), head=Head.block(0, k))
        return fresh.register(task_id)
    raise ValueError(f"unknown head strategy {strategy!r}")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def checkpoint_bytes(model: ModelState) -> bytes:
    desc = {
        "spec": model.spec.to_dict(),
        "head": model.head.to_list(),
        "heads": [[n, h.to_list()] for n, h in model.heads],
        "init_seed": model.init_seed,
        "lineage": list(model.lineage),
    }
    blob = json.dumps(desc, sort_keys=True, default=_json_default).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<Q", len(model.params)))
    buf.write(np.ascontiguousarray(model.params.values, dtype="<f8").tobytes())
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


def model_from_bytes(raw: bytes) -> ModelState:
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    if len(raw) < 12:
        raise CheckpointError("truncated checkpoint header")
    version, blen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12 + blen
    if len(raw) < pos + 8:
        raise CheckpointError("truncated checkpoint descriptor")
    desc = json.loads(raw[12:pos].decode())
    (count,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if len(raw) != pos + 8 * count:
        raise CheckpointError("parameter payload length mismatch")
    values = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).astype(np.float64)
    spec = ModelSpec.from_dict(desc["spec"])
    return ModelState(
        spec,
        ParamVector(values, spec.layout()),
        Head(*desc["head"]),
        tuple((n, Head(*h)) for n, h in desc["heads"]),
        int(desc["init_seed"]),
        tuple(desc["lineage"]),
    )


def save_checkpoint(model: ModelState, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
