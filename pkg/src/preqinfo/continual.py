"""Continual learning through the lens of information advantage.

A sequence of tasks is trained with one method (plain, L2, EWC, IMM or joint
multi-task training) and one output-layer strategy. The final model is then
scored on every past task and on a broader future task, both by accuracy and
by L_IA against the fresh initialization of a single-task run.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .datakit import LabeledDataset, TaskSpec, concat, gen_hier_classification, subtask
from .infomeasure import information_advantage
from .jobs import run_jobs
from .models import (HEAD_STRATEGIES, Head, IncompatibleError, ModelSpec, ModelState, Penalty, TrainConfig,
                     accuracy, backward_sq, forward, init_model, reset_head, train)
from .numkit import ParamVector, RngStream, log_softmax
from .preqcode import PreqConfig

METHOD_KINDS = ("plain", "l2", "ewc", "imm", "multitask")
MERGE_EPS = 1e-8
RATIO_CLIP = (0.0, 1.1)


@dataclass(frozen=True)
class MethodSpec:
    kind: str = "plain"
    c: float = 0.0
    fisher_samples: int = 200
    merge: str = "mean"  # imm only: mean | mode
    transfer: str = "weight"  # imm only: weight | l2
    alphas: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method {self.kind!r}")
        if not (math.isfinite(self.c) and self.c >= 0):
            raise ValueError("c must be finite and >= 0")
        if self.merge not in ("mean", "mode") or self.transfer not in ("weight", "l2"):
            raise ValueError("imm merge must be mean|mode and transfer weight|l2")
        if self.alphas is not None and abs(sum(self.alphas) - 1.0) > 1e-9:
            raise ValueError("alphas must sum to 1")

    @property
    def label(self) -> str:
        if self.kind == "imm":
            return f"imm-{self.merge} ({'wt' if self.transfer == 'weight' else 'l2'})"
        return self.kind

    @property
    def anchored(self) -> bool:
        return self.kind in ("l2", "ewc") or (self.kind == "imm" and self.transfer == "l2")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "c": self.c, "fisher_samples": self.fisher_samples, "merge": self.merge,
                "transfer": self.transfer, "alphas": None if self.alphas is None else list(self.alphas)}


@dataclass(frozen=True)
class FisherDiag:
    values: np.ndarray
    samples: int

    def __post_init__(self):
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("Fisher entries must be finite and >= 0")

    def remap(self, model: ModelState, layout) -> "FisherDiag":
        return FisherDiag(ParamVector(self.values, model.params.layout).remap(layout).values, self.samples)

    def __add__(self, other: "FisherDiag") -> "FisherDiag":
        return FisherDiag(self.values + other.values, self.samples + other.samples)


def estimate_fisher(model: ModelState, data: LabeledDataset, samples: int = 200,
                    rng: Optional[RngStream] = None) -> FisherDiag:
    """Diagonal Fisher: mean squared log-likelihood gradient with labels drawn from the model."""
    if len(data) == 0:
        raise ValueError("estimate_fisher on empty data")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    gen = (rng or RngStream(0, ("fisher",))).generator()
    idx = gen.choice(len(data), size=samples, replace=samples > len(data))
    X = data.inputs[idx]
    logits, cache = forward(model.spec, model.params, X)
    h = model.head
    p = np.exp(log_softmax(logits[:, h.lo:h.hi]))
    u = gen.random(samples)[:, None]
    y = np.minimum((np.cumsum(p, axis=1) < u).sum(axis=1), p.shape[1] - 1)
    g = np.zeros_like(logits)
    g[:, h.lo:h.hi] = p
    g[np.arange(samples), h.lo + y] -= 1.0
    return FisherDiag(backward_sq(model.spec, model.params, cache, g) / samples, samples)


def _anchor_penalty(model: ModelState, anchor: ModelState, weights: np.ndarray, c: float) -> Penalty:
    layout = model.params.layout
    a = anchor.params.remap(layout).values
    w = ParamVector(weights, anchor.params.layout).remap(layout).values
    return Penalty(a, w, float(c))


def train_task(model: ModelState, data: LabeledDataset, method: MethodSpec, cfg: TrainConfig,
               anchor: Optional[ModelState] = None, fisher: Optional[FisherDiag] = None,
               rng: Optional[RngStream] = None) -> ModelState:
    """Train one task under ``method``; anchored methods pull toward ``anchor``.

    ``fisher`` is aligned with the anchor's layout. Output rows that the anchor
    does not have get zero penalty weight.
    """
    pen = None
    if method.anchored and method.c > 0:
        if anchor is None:
            raise ValueError(f"{method.label} needs an anchor after the first task")
        if method.kind == "ewc":
            if fisher is None:
                raise ValueError("ewc needs an accumulated Fisher")
            weights = fisher.values
        else:
            weights = np.ones(len(anchor.params))
        pen = _anchor_penalty(model, anchor, weights, method.c)
    return train(model, data, replace(cfg, penalty=pen), rng)


def imm_merge(models: Sequence[ModelState], fishers: Optional[Sequence[FisherDiag]] = None, merge: str = "mean",
              alphas: Optional[Sequence[float]] = None) -> ModelState:
    """Moment-matching merge of task models sharing one architecture."""
    if not models:
        raise ValueError("nothing to merge")
    spec = models[0].spec
    if any(m.spec != spec for m in models):
        raise IncompatibleError("imm_merge needs identical model specs")
    alphas = np.full(len(models), 1.0 / len(models)) if alphas is None else np.asarray(alphas, dtype=np.float64)
    if len(alphas) != len(models):
        raise ValueError("one alpha per model")
    thetas = np.stack([m.params.values for m in models])
    if merge == "mean":
        merged = alphas @ thetas
    elif merge == "mode":
        if fishers is None or len(fishers) != len(models):
            raise ValueError("mode merge needs one Fisher per model")
        F = np.stack([f.values for f in fishers]) * alphas[:, None]
        merged = (F * thetas).sum(axis=0) / (F.sum(axis=0) + MERGE_EPS)
    else:
        raise ValueError(f"unknown merge {merge!r}")
    if len({m.checkpoint_id() for m in models}) == 1:
        merged = thetas[0].copy()  # identical inputs merge to themselves bit for bit
    return models[-1].with_values(merged, {"event": "merge", "how": merge, "count": len(models)})


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------


@dataclass
class TaskData:
    name: str
    train: LabeledDataset
    stream: LabeledDataset
    eval: LabeledDataset

    @property
    def K(self) -> int:
        return self.train.K


def continual_suite(tasks: int = 4, classes: int = 3, d_in: int = 16, separation=(4.0, 2.0), sigma2: float = 1.0,
                    n_train: int = 1000, n_stream: int = 1000, n_eval: int = 500, rng: Optional[RngStream] = None,
                    offset_rank: Optional[int] = None) -> tuple[list[TaskData], TaskData]:
    """Within-category tasks of a hierarchical mixture, plus the joint task as the future task."""
    rng = rng or RngStream(0, ("continual-suite",))
    sizes = {"train": n_train, "stream": n_stream, "eval": n_eval}
    totals = {part: int(math.ceil(1.2 * size * tasks)) + 64 for part, size in sizes.items()}
    base = gen_hier_classification(tasks, classes, d_in, separation, sigma2, sum(totals.values()), rng,
                                   offset_rank)[0]
    parts, start = {}, 0
    for part in sizes:
        parts[part] = base[start:start + totals[part]]
        start += totals[part]
    out = []
    for t in range(tasks):
        spec = TaskSpec.select(f"task{t}", range(t * classes, (t + 1) * classes))
        split = {p: subtask(parts[p], spec)[:sizes[p]] for p in sizes}
        out.append(TaskData(f"task{t}", split["train"], split["stream"], split["eval"]))
    future = TaskData("future", parts["train"], parts["stream"], parts["eval"][:n_eval])
    return out, future


@dataclass(frozen=True)
class ContinualConfig:
    hidden: int = 16
    train: TrainConfig = field(default_factory=TrainConfig)
    preq: PreqConfig = field(default_factory=PreqConfig)
    k: Optional[int] = None  # L_IA stream length per task; default: the whole stream
    future_budget: int = 1000
    seed: int = 0

    def to_dict(self) -> dict:
        return {"hidden": self.hidden, "train": self.train.to_dict(), "preq": self.preq.to_dict(), "k": self.k,
                "future_budget": self.future_budget, "seed": self.seed}


@dataclass
class ContinualResult:
    method: str
    head_strategy: str
    per_task: list[dict]
    all_past: dict
    future: dict
    seed: int
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"method": self.method, "head_strategy": self.head_strategy, "per_task": self.per_task,
                "all_past": self.all_past, "future": self.future, "seed": self.seed, "config": self.config}

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path


def _rows(data: LabeledDataset, head: Head) -> LabeledDataset:
    """Re-express task-local labels as output rows restricted to ``head``'s softmax."""
    n = len(data)
    return replace(data, labels=data.labels + head.offset, K=head.hi,
                   blocks=np.tile([head.lo, head.hi], (n, 1)), spans=None)


def _interleave(parts: Sequence[LabeledDataset], rng: RngStream) -> LabeledDataset:
    joined = concat(parts, max(p.K for p in parts))
    return joined.take(rng.generator().permutation(len(joined)))


def _stream(task: TaskData, cfg: ContinualConfig) -> LabeledDataset:
    return task.stream[: (cfg.k or len(task.stream))]


def _lia(theta: ModelState, ref: ModelState, stream: LabeledDataset, cfg: ContinualConfig, rng: RngStream):
    """L_IA over the whole given stream."""
    return information_advantage(theta, ref, stream, len(stream), cfg.preq, rng)


@dataclass
class SingleRef:
    init: ModelState
    model: ModelState
    lit: float
    acc: float


def single_task_reference(task: TaskData, index: int, d_in: int, cfg: ContinualConfig) -> SingleRef:
    """A model trained on one task alone, with L_IT measured against its own initialization."""
    init = init_model(ModelSpec.mlp(d_in, cfg.hidden, task.K), RngStream(cfg.seed, ("single", index, "init")))
    model = train(init, task.train, cfg.train, RngStream(cfg.seed, ("single", index, "train")))
    lit = _lia(model, init, _stream(task, cfg), cfg,
                                RngStream(cfg.seed, ("lia", index))).value
    return SingleRef(init, model, lit, accuracy(model, task.eval))


def _prepare(model: Optional[ModelState], strategy: str, t: int, task: TaskData, d_in: int,
             cfg: ContinualConfig) -> ModelState:
    if model is None:
        spec = ModelSpec.mlp(d_in, cfg.hidden, task.K)
        return init_model(spec, RngStream(cfg.seed, ("seq", "init"))).register(str(t))
    return reset_head(model, "separate" if strategy == "fresh" else strategy, t,
                      RngStream(cfg.seed, ("seq", "head", t)), k=task.K)


def run_sequence(tasks: Sequence[TaskData], method: MethodSpec, head_strategy: str = "separate",
                 cfg: ContinualConfig = ContinualConfig(), future: Optional[TaskData] = None,
                 refs: Optional[Sequence[SingleRef]] = None) -> tuple[ContinualResult, ModelState]:
    """Train the tasks in order and evaluate the final model on every task and the future task."""
    if len(tasks) < 2:
        raise ValueError("a sequence needs at least two tasks")
    if head_strategy not in HEAD_STRATEGIES[:3]:
        raise ValueError(f"unknown head strategy {head_strategy!r}")
    d_in = tasks[0].train.inputs.shape[1]
    if any(t.train.inputs.shape[1] != d_in for t in tasks):
        raise IncompatibleError("tasks differ in input dimension")
    refs = list(refs) if refs is not None else [single_task_reference(t, i, d_in, cfg) for i, t in enumerate(tasks)]
    model = None
    if method.kind == "multitask":
        for t, task in enumerate(tasks):
            model = _prepare(model, head_strategy, t, task, d_in, cfg)
        joint = _interleave([_rows(task.train, model.head_for(str(t))) for t, task in enumerate(tasks)],
                            RngStream(cfg.seed, ("seq", "joint-train")))
        model = train(model, joint, cfg.train, RngStream(cfg.seed, ("seq", "train", "joint")))
    else:
        fisher = None
        snapshots, fishers = [], []
        anchor = None
        for t, task in enumerate(tasks):
            model = _prepare(model, head_strategy, t, task, d_in, cfg)
            model = train_task(model, task.train, method if anchor is not None else MethodSpec(), cfg.train,
                               anchor, fisher, RngStream(cfg.seed, ("seq", "train", t)))
            if method.kind == "ewc" or (method.kind == "imm" and method.merge == "mode"):
                f = estimate_fisher(model, task.train, method.fisher_samples, RngStream(cfg.seed, ("fisher", t)))
                fishers.append(f)
                # running sum; rows added for later tasks carry no Fisher mass yet
                fisher = f if fisher is None else fisher.remap(anchor, model.params.layout) + f
            anchor = model
            snapshots.append(model)
        if method.kind == "imm":
            model = _imm_final(snapshots, fishers, method, tasks)
    return evaluate(model, tasks, refs, method, head_strategy, cfg, future), model


def _imm_final(snapshots: list[ModelState], fishers: list[FisherDiag], method: MethodSpec, tasks) -> ModelState:
    final = snapshots[-1]
    layout = final.params.layout
    grown = [replace(m, spec=final.spec, params=m.params.remap(layout), heads=final.heads, head=final.head)
             for m in snapshots]
    fs = None
    if method.merge == "mode":
        fs = [f.remap(m, layout) for f, m in zip(fishers, snapshots)]
    merged = imm_merge(grown, fs, method.merge, method.alphas)
    values = merged.params.values.copy()
    # every task keeps the output rows it was trained with
    for t, m in enumerate(grown):
        mask = final.head_param_mask(final.head_for(str(t)).as_block())
        values[mask] = m.params.values[mask]
    return merged.with_values(values)


def evaluate(model: ModelState, tasks: Sequence[TaskData], refs: Sequence[SingleRef], method: MethodSpec,
             head_strategy: str, cfg: ContinualConfig, future: Optional[TaskData] = None) -> ContinualResult:
    per_task = []
    for t, (task, ref) in enumerate(zip(tasks, refs)):
        sel = model.select(str(t))
        blk = model.select(str(t), block=True)
        if head_strategy == "union":
            acc = accuracy(sel, _rows(task.eval, sel.head))  # task-agnostic: softmax over every row
        else:
            acc = accuracy(blk, task.eval)
        lia = _lia(blk, ref.init, _stream(task, cfg), cfg,
                                    RngStream(cfg.seed, ("lia", t)))
        per_task.append({"task": task.name, "accuracy": acc, "L_IA_nats": lia.value, "L_IA_knats": lia.value_knats,
                         "reference": ref.init.checkpoint_id(), "single_L_IT_nats": ref.lit,
                         "single_accuracy": ref.acc})
    joint_stream = _interleave(
        [_rows(_stream(task, cfg)[: max(1, len(_stream(task, cfg)) // len(tasks))],
               model.head_for(str(t)).as_block()) for t, task in enumerate(tasks)],
        RngStream(cfg.seed, ("seq", "joint-stream")))
    joint_ref = init_model(model.spec, RngStream(cfg.seed, ("joint", "init")))
    joint = _lia(model, joint_ref, joint_stream, cfg, RngStream(cfg.seed, ("lia", "joint")))
    all_past = {"accuracy": float(np.mean([p["accuracy"] for p in per_task])),
                "L_IA_sum_nats": float(sum(p["L_IA_nats"] for p in per_task)),
                "L_IA_joint_nats": joint.value, "joint_reference": joint_ref.checkpoint_id()}
    fut = {}
    if future is not None:
        fut = evaluate_future(model, future, cfg)
    return ContinualResult(method.label, head_strategy, per_task, all_past, fut, cfg.seed,
                           {"method": method.to_dict(), **cfg.to_dict()})


def evaluate_future(model: ModelState, future: TaskData, cfg: ContinualConfig) -> dict:
    """Fresh output layer on the final body; L_IA against a fresh model, accuracy after a fixed budget."""
    theta0 = reset_head(model, "fresh", "future", RngStream(cfg.seed, ("future", "head")), k=future.K)
    ref = init_model(theta0.spec, RngStream(cfg.seed, ("future", "init")))
    lia = _lia(theta0, ref, _stream(future, cfg), cfg, RngStream(cfg.seed, ("lia", "future")))
    tuned = train(theta0, future.train[:cfg.future_budget], cfg.train, RngStream(cfg.seed, ("future", "train")))
    return {"accuracy": accuracy(tuned, future.eval), "L_IA_nats": lia.value, "L_IA_knats": lia.value_knats,
            "reference": ref.checkpoint_id(), "budget": cfg.future_budget}


def ratio_kept(result: ContinualResult, single_refs: Optional[Sequence[float]] = None) -> list[dict]:
    """Per task: final-model L_IA over the single-task model's L_IT, clipped to [0, 1.1]."""
    refs = single_refs if single_refs is not None else [p["single_L_IT_nats"] for p in result.per_task]
    out = []
    for p, ref in zip(result.per_task, refs):
        if not ref > 0:
            raise ValueError(f"reference L_IT for {p['task']} must be positive, got {ref}")
        raw = p["L_IA_nats"] / ref
        lo, hi = RATIO_CLIP
        out.append({"task": p["task"], "ratio": min(max(raw, lo), hi), "raw": raw, "clipped": not lo <= raw <= hi})
    return out


def retrain_head(model: ModelState, task: LabeledDataset, cfg: TrainConfig, eval_set: Optional[LabeledDataset] = None,
                 rng: Optional[RngStream] = None) -> tuple[float, float]:
    """Accuracy before and after training only the active output rows, body frozen."""
    eval_set = eval_set if eval_set is not None else task
    before = accuracy(model, eval_set)
    mask = model.head_param_mask()
    tuned = train(model, task, cfg, rng or RngStream(cfg.seed, ("retrain-head",)), trainable=mask)
    return before, accuracy(tuned, eval_set)


TABLE_METHODS = ("plain", "l2", "ewc", "imm-mean (wt)", "imm-mode (wt)", "imm-mean (l2)", "imm-mode (l2)", "multitask")


def table_rows(results: Sequence[ContinualResult]) -> tuple[list[str], list[list]]:
    """Rows laid out as method x {per-task acc and L_IA, all past, future}; L_IA in k-nats."""
    T = len(results[0].per_task)
    header = ["method"]
    for t in range(T):
        header += [f"task{t}_acc", f"task{t}_L_IA_knats"]
    header += ["all_past_acc", "all_past_L_IA_knats", "all_past_joint_L_IA_knats", "future_acc", "future_L_IA_knats"]
    rows = []
    for r in results:
        row = [r.method]
        for p in r.per_task:
            row += [round(p["accuracy"], 4), round(p["L_IA_knats"], 4)]
        row += [round(r.all_past["accuracy"], 4), round(r.all_past["L_IA_sum_nats"] / 1000, 4),
                round(r.all_past["L_IA_joint_nats"] / 1000, 4),
                round(r.future.get("accuracy", float("nan")), 4), round(r.future.get("L_IA_knats", float("nan")), 4)]
        rows.append(row)
    return header, rows


def write_table(results: Sequence[ContinualResult], path) -> Path:
    header, rows = table_rows(results)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _job(args):
    tasks, method, strategy, cfg, future = args
    return run_sequence(tasks, method, strategy, cfg, future)[0]


def run_methods(tasks, methods: Sequence[MethodSpec], strategy: str, cfg: ContinualConfig, seeds: Sequence[int],
                future: Optional[TaskData] = None, jobs: Optional[int] = None) -> list[ContinualResult]:
    """Every (seed, method) pair as an independent job, returned seed-major in a fixed order."""
    items = [(tasks, m, strategy, replace(cfg, seed=s), future) for s in seeds for m in methods]
    return run_jobs(_job, items, jobs)
