"""Dense numerics for the model zoo.

Everything is float64 numpy. Layers expose explicit forward/backward pairs so
each can be checked against finite differences; there is no autodiff.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PROB_FLOOR = 1e-9
LOG_PROB_FLOOR = float(np.log(PROB_FLOOR))


class ShapeError(ValueError):
    """Raised on incompatible array shapes."""


class LabelError(ValueError):
    """Raised when a label falls outside the label space."""


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """A seeded random stream addressed by a path of labels.

    Streams with the same ``(seed, path)`` always produce the same draws.
    Children with different labels get independent ``SeedSequence`` spawn keys.
    """

    seed: int
    path: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(str(x) for x in self.path))

    def child(self, *labels: object) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(str(x) for x in labels))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=[_label_key(p) for p in self.path])
        return np.random.Generator(np.random.PCG64(ss))

    def describe(self) -> str:
        return f"{self.seed}:" + "/".join(self.path)


# ---------------------------------------------------------------------------
# Parameter vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Layout:
    """Ordered, contiguous (name, offset, shape) entries of a flat vector."""

    entries: tuple[tuple[str, int, tuple[int, ...]], ...]

    @classmethod
    def from_shapes(cls, shapes: Sequence[tuple[str, tuple[int, ...]]]) -> "Layout":
        entries = []
        offset = 0
        for name, shape in shapes:
            entries.append((name, offset, tuple(int(s) for s in shape)))
            offset += int(np.prod(shape, dtype=np.int64))
        return cls(tuple(entries))

    @property
    def size(self) -> int:
        if not self.entries:
            return 0
        _, off, shape = self.entries[-1]
        return off + int(np.prod(shape, dtype=np.int64))

    def slot(self, name: str) -> tuple[int, tuple[int, ...]]:
        for n, off, shape in self.entries:
            if n == name:
                return off, shape
        raise KeyError(name)

    def names(self) -> list[str]:
        return [n for n, _, _ in self.entries]


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        if self.values.ndim != 1 or self.values.shape[0] != self.layout.size:
            raise ShapeError(f"values of length {self.values.shape} do not match layout size {self.layout.size}")

    def view(self, name: str) -> np.ndarray:
        off, shape = self.layout.slot(name)
        n = int(np.prod(shape, dtype=np.int64))
        return self.values[off:off + n].reshape(shape)

    def views(self) -> dict[str, np.ndarray]:
        return {n: self.view(n) for n in self.layout.names()}

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def remap(self, layout: Layout, fill: float = 0.0) -> "ParamVector":
        """Copy into a new layout by tensor name; grown leading dims are filled."""
        out = np.full(layout.size, fill, dtype=np.float64)
        target = ParamVector(out, layout)
        for name in layout.names():
            try:
                src = self.view(name)
            except KeyError:
                continue
            dst = target.view(name)
            region = tuple(slice(0, min(a, b)) for a, b in zip(src.shape, dst.shape))
            dst[region] = src[region]
        return target

    def __len__(self) -> int:
        return self.layout.size


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def affine_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``x @ W.T + b`` for a single vector or a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"affine: x{x.shape} W{W.shape} b{b.shape}")
    return x @ W.T + b


def affine_backward(x: np.ndarray, W: np.ndarray, grad_out: np.ndarray):
    """Gradients of a batched affine map: (dx, dW, db)."""
    x2 = np.atleast_2d(x)
    g2 = np.atleast_2d(grad_out)
    dW = g2.T @ x2
    db = g2.sum(axis=0)
    dx = g2 @ W
    return dx.reshape(np.shape(x)), dW, db


def tanh_forward(z: np.ndarray) -> np.ndarray:
    return np.tanh(z)


def tanh_backward(h: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # h is the forward output
    return grad_out * (1.0 - h * h)


def embedding_forward(tokens: np.ndarray, E: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= E.shape[0]):
        raise ShapeError("token id out of embedding range")
    return E[tokens]


def embedding_backward(tokens: np.ndarray, E_shape: tuple[int, int], grad_out: np.ndarray) -> np.ndarray:
    dE = np.zeros(E_shape)
    np.add.at(dE, np.asarray(tokens).reshape(-1), np.reshape(grad_out, (-1, E_shape[1])))
    return dE


def log_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise log-softmax; entries where ``mask`` is False get ``-inf``."""
    z = np.asarray(logits, dtype=np.float64)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=-1, keepdims=True)
    shifted = z - m
    lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    return shifted - lse


def softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    return np.exp(log_softmax(logits, mask))


def softmax_nll(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Negative log-likelihood (nats) of ``label`` and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    K = logits.shape[-1]
    if not 0 <= int(label) < K:
        raise LabelError(f"label {label} outside [0, {K})")
    lp = log_softmax(logits)
    loss = -max(float(lp[label]), LOG_PROB_FLOOR)
    grad = np.exp(lp)
    grad[label] -= 1.0
    return loss, grad


def batch_nll(logits: np.ndarray, rows: np.ndarray, mask: np.ndarray | None = None,
              row_end: np.ndarray | None = None):
    """Per-example clamped NLL, gradient of their *sum*, and the clamp count.

    ``rows`` indexes the target row of each example; ``mask`` restricts the
    softmax support per example (used for per-task output blocks). With
    ``row_end`` the target is the row range ``[rows, row_end)`` and its
    probability is the sum over that range.
    """
    lp = log_softmax(logits, mask)
    idx = np.arange(lp.shape[0])
    if row_end is None:
        target = lp[idx, rows]
    else:
        cols = np.arange(lp.shape[1])
        tmask = (cols >= rows[:, None]) & (cols < row_end[:, None])
        target = log_softmax(np.where(tmask, lp, -np.inf))  # normalized within the target range
        target = lp[idx, rows] - target[idx, rows]
    if not np.all(np.isfinite(target)):
        raise LabelError("target row lies outside the example's output block")
    clamps = int(np.count_nonzero(target < LOG_PROB_FLOOR))
    losses = -np.maximum(target, LOG_PROB_FLOOR)
    grad = np.exp(lp)
    if row_end is None:
        grad[idx, rows] -= 1.0
    else:
        grad -= np.where(tmask, np.exp(lp - target[:, None]), 0.0)
    return losses, grad, clamps


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9  # momentum for sgd-momentum
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def reset(self, size: int) -> "OptimizerState":
        return OptimizerState(self.kind, self.lr, self.beta1, self.beta2, self.eps, 0,
                              np.zeros(size), np.zeros(size) if self.kind == "adam" else None)


def _step_inplace(theta: np.ndarray, grad: np.ndarray, st: OptimizerState) -> None:
    st.step += 1
    if st.kind == "sgd-momentum":
        st.m *= st.beta1
        st.m += grad
        theta -= st.lr * st.m
    elif st.kind == "adam":
        st.m *= st.beta1
        st.m += (1.0 - st.beta1) * grad
        st.v *= st.beta2
        st.v += (1.0 - st.beta2) * grad * grad
        mhat = st.m / (1.0 - st.beta1 ** st.step)
        vhat = st.v / (1.0 - st.beta2 ** st.step)
        theta -= st.lr * mhat / (np.sqrt(vhat) + st.eps)
    else:
        raise ValueError(f"unknown optimizer kind {st.kind!r}")


def optimizer_step(params: ParamVector, grads: ParamVector, state: OptimizerState):
    """One deterministic update; returns new (params, state) and leaves inputs intact."""
    if grads.layout != params.layout:
        raise ShapeError("gradient layout differs from parameter layout")
    st = OptimizerState(state.kind, state.lr, state.beta1, state.beta2, state.eps, state.step,
                        None if state.m is None else state.m.copy(),
                        None if state.v is None else state.v.copy())
    if st.m is None or st.m.shape != params.values.shape:
        if st.step:
            raise ShapeError("optimizer buffers do not match parameter layout")
        st = st.reset(len(params))
    theta = params.values.copy()
    _step_inplace(theta, grads.values, st)
    return ParamVector(theta, params.layout), st


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6, coords: Iterable[int] | None = None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (optionally a subset of coords)."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    g = np.zeros_like(flat)
    for i in (range(flat.size) if coords is None else coords):
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g.reshape(x.shape)


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))
