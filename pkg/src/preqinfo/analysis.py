"""Dissecting what a model learns across related tasks.

A chain ``[T, T', T'']`` trains along the first hops and reports the L_IT of
the last hop, measured from the model left by the previous hops. Sums and
differences of chain values should obey a set of approximate identities, and
give a Venn-style split of shared and task-specific information.
"""
from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .datakit import LabeledDataset, TaskSpec, gen_hier_classification, subtask
from .infomeasure import information_transfer
from .jobs import run_jobs
from .models import ModelSpec, ModelState, init_model, reset_head, train
from .numkit import RngStream
from .preqcode import PreqConfig

V, A, VA, FULL = "T_V", "T_A", "T_V/A", "T_full"

# (id, [(sign, chain), ...], rhs chain)
IDENTITIES = (
    ("two-stage V", [(1, (V,)), (1, (V, FULL))], (FULL,)),
    ("two-stage A", [(1, (A,)), (1, (A, FULL))], (FULL,)),
    ("two-stage V/A", [(1, (VA,)), (1, (VA, FULL))], (FULL,)),
    ("three-stage V,A", [(1, (V, A)), (1, (V, A, FULL)), (-1, (V, A, V))], (V, FULL)),
    ("three-stage A,V", [(1, (A, V)), (1, (A, V, FULL)), (-1, (A, V, A))], (A, FULL)),
    ("category V,A", [(1, (V, A, FULL)), (-1, (V, A, V))], (V, A, VA)),
    ("category A,V", [(1, (A, V, FULL)), (-1, (A, V, A))], (A, V, VA)),
)

STANDARD_CHAINS = (
    (V,), (A,), (VA,), (FULL,),
    (V, A), (A, V), (V, FULL), (A, FULL), (VA, FULL),
    (V, A, V), (A, V, A), (V, A, VA), (A, V, VA), (V, A, FULL), (A, V, FULL),
)


class ChainError(KeyError):
    pass


@dataclass(frozen=True)
class ChainSpec:
    tasks: tuple[str, ...]

    def __post_init__(self):
        if not 1 <= len(self.tasks) <= 3:
            raise ChainError("chains have between 1 and 3 tasks")

    @property
    def label(self) -> str:
        return "->".join(self.tasks)


@dataclass
class TaskRegistry:
    """Per-task training pools (intermediate hops) and measurement streams (final hop).

    Each task is held in two encodings: ``plain`` with task-local labels (for a
    fresh output layer per task) and ``shared`` on one output row per class.
    """

    plain: dict[str, tuple[LabeledDataset, LabeledDataset]]
    shared: dict[str, tuple[LabeledDataset, LabeledDataset]]
    d_in: int
    rows: int
    meta: dict = field(default_factory=dict)

    def resolve(self, name: str, heads: str = "fresh") -> tuple[LabeledDataset, LabeledDataset]:
        table = self.shared if heads == "shared" else self.plain
        try:
            return table[name]
        except KeyError:
            raise ChainError(f"task {name!r} is not registered") from None

    def K(self, name: str) -> int:
        return self.resolve(name)[0].K


def hier_tasks(classes_per_cat: Sequence[int]) -> dict[str, TaskSpec]:
    """T_V / T_A: classes within category 0 / 1; T_V/A: the category; T_full: every class."""
    if len(classes_per_cat) != 2:
        raise ValueError("the dissection suite uses exactly two categories")
    a, b = classes_per_cat
    return {
        V: TaskSpec.select(V, range(a)),
        A: TaskSpec.select(A, range(a, a + b)),
        VA: TaskSpec.group(VA, [0] * a + [1] * b),
        FULL: TaskSpec.select(FULL, range(a + b)),
    }


def row_space_task(base: LabeledDataset, spec: TaskSpec) -> LabeledDataset:
    """Encode a subtask on one shared output row per source class.

    Class tasks restrict the softmax to their classes' rows. A grouping task
    keeps every row and scores a group by the summed probability of its rows,
    which requires the groups to be contiguous row ranges.
    """
    sub = subtask(base, spec)
    src = base.labels[np.isin(base.labels, sorted(spec.filter))]
    C = base.K
    n = len(sub)
    if spec.K == len(spec.filter):  # one class per label
        lo, hi = min(spec.filter), max(spec.filter) + 1
        if hi - lo != len(spec.filter):
            raise ValueError(f"task {spec.name} classes must be contiguous rows")
        blocks = np.tile([lo, hi], (n, 1))
        return replace(sub, labels=src, K=C, blocks=blocks)
    ranges = {}
    for c, g in spec.remap:
        lo, hi = ranges.get(g, (c, c + 1))
        ranges[g] = (min(lo, c), max(hi, c + 1))
    for g, (lo, hi) in ranges.items():
        if sum(1 for _, h in spec.remap if h == g) != hi - lo:
            raise ValueError(f"group {g} of task {spec.name} is not a contiguous row range")
    spans = np.array([ranges[g] for g in sub.labels], dtype=np.int64).reshape(n, 2)
    return replace(sub, blocks=np.tile([0, C], (n, 1)), spans=spans)


def hier_registry(classes_per_cat=(2, 3), d_in: int = 16, separation=(4.0, 2.0), sigma2: float = 1.0,
                  n_pool: int = 3000, n_stream: int = 4500, rng: Optional[RngStream] = None,
                  offset_rank: Optional[int] = None) -> TaskRegistry:
    """Synthetic hierarchical registry; every task gets ``n_pool`` and ``n_stream`` examples.

    Pools and streams are disjoint halves of one draw, so the final hop is
    never measured on examples an earlier hop trained on. All tasks share one
    output row per class.
    """
    rng = rng or RngStream(0, ("registry",))
    C = sum(classes_per_cat)
    smallest = min(classes_per_cat) / C
    specs = hier_tasks(classes_per_cat)
    totals = {part: int(math.ceil(1.15 * size / smallest)) + 64 for part, size in (("pool", n_pool),
                                                                                  ("stream", n_stream))}
    base = gen_hier_classification(2, list(classes_per_cat), d_in, separation, sigma2, sum(totals.values()),
                                   rng, offset_rank)[0]
    cut = totals["pool"]
    bases = {"pool": base[:cut], "stream": base[cut:]}
    plain, shared = {}, {}
    for name, spec in specs.items():
        pair_p, pair_s = [], []
        for part, size in (("pool", n_pool), ("stream", n_stream)):
            a, b = subtask(bases[part], spec), row_space_task(bases[part], spec)
            if len(a) < size:
                raise ValueError(f"base draw too small for task {name}")
            pair_p.append(a[:size])
            pair_s.append(b[:size])
        plain[name], shared[name] = tuple(pair_p), tuple(pair_s)
    meta = {"classes_per_cat": list(classes_per_cat), "d_in": d_in, "separation": list(separation),
            "sigma2": sigma2, "n_pool": n_pool, "n_stream": n_stream, "offset_rank": offset_rank,
            "seed": rng.describe(), "rows": C}
    return TaskRegistry(plain, shared, d_in, C, meta)


@dataclass(frozen=True)
class DissectConfig:
    n: int = 3000
    k: int = 1500
    hidden: int = 16
    heads: str = "fresh"  # fresh: new output layer on every task switch; shared: one row per class
    preq: PreqConfig = field(default_factory=PreqConfig)
    seeds: tuple[int, ...] = (0, 1, 2)
    tolerance: float = 0.2
    chains: tuple[tuple[str, ...], ...] = STANDARD_CHAINS

    def to_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "hidden": self.hidden, "heads": self.heads, "preq": self.preq.to_dict(),
                "seeds": list(self.seeds), "tolerance": self.tolerance, "chains": [list(c) for c in self.chains]}


class ModelCache:
    """Trained models keyed by (task prefix, seed); last write wins on identical keys."""

    def __init__(self):
        self._d: dict = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key):
        with self._lock:
            m = self._d.get(key)
            if m is None:
                self.misses += 1
            else:
                self.hits += 1
            return m

    def put(self, key, model: ModelState):
        with self._lock:
            self._d[key] = model


def _enter(model: Optional[ModelState], prev: Optional[str], task: str, registry: TaskRegistry,
           cfg: DissectConfig, seed: int, prefix: tuple) -> ModelState:
    """The starting point for ``task``: fresh init, or the previous model with its head prepared."""
    if cfg.heads == "shared":
        if model is None:
            return init_model(ModelSpec.mlp(registry.d_in, cfg.hidden, registry.rows),
                              RngStream(seed, ("dissect", "init")))
        return model
    K = registry.K(task)
    if model is None:
        return init_model(ModelSpec.mlp(registry.d_in, cfg.hidden, K), RngStream(seed, ("dissect", "init")))
    if prev == task:
        return model
    return reset_head(model, "fresh", task, RngStream(seed, ("dissect", "head", *prefix)), k=K)


def model_after(prefix: Sequence[str], registry: TaskRegistry, cfg: DissectConfig, seed: int,
                cache: Optional[ModelCache] = None) -> ModelState:
    """The model trained along ``prefix``, built hop by hop from cached shorter prefixes."""
    prefix = tuple(prefix)
    key = (prefix, seed)
    if cache is not None:
        hit = cache.get(key)
        if hit is not None:
            return hit
    if not prefix:
        raise ChainError("empty task prefix")
    prior = model_after(prefix[:-1], registry, cfg, seed, cache) if len(prefix) > 1 else None
    model = _enter(prior, prefix[-2] if len(prefix) > 1 else None, prefix[-1], registry, cfg, seed, prefix)
    pool, _ = registry.resolve(prefix[-1], cfg.heads)
    model = train(model, pool[:cfg.n], cfg.preq.train, RngStream(seed, ("dissect", "train", *prefix)))
    if cache is not None:
        cache.put(key, model)
    return model


def run_chain(chain: ChainSpec | Sequence[str], registry: TaskRegistry, cfg: DissectConfig, seed: int = 0,
              cache: Optional[ModelCache] = None):
    """L_IT (nats) of the chain's final hop, measured from the model left by the earlier hops."""
    tasks = chain.tasks if isinstance(chain, ChainSpec) else tuple(chain)
    ChainSpec(tasks)
    for t in tasks:
        registry.resolve(t)
    prior = model_after(tasks[:-1], registry, cfg, seed, cache) if len(tasks) > 1 else None
    theta0 = _enter(prior, tasks[-2] if len(tasks) > 1 else None, tasks[-1], registry, cfg, seed, tasks)
    _, stream = registry.resolve(tasks[-1], cfg.heads)
    rep = information_transfer(theta0, stream, cfg.n, cfg.k, cfg.preq, RngStream(seed, ("dissect", "lit", *tasks)))
    return rep.value


@dataclass
class DissectionReport:
    chains: dict[str, dict]
    residuals: list[tuple[str, Optional[float]]]
    venn: dict
    tolerance: float
    config: dict = field(default_factory=dict)

    def value(self, tasks: Sequence[str]) -> float:
        label = "->".join(tasks)
        if label not in self.chains:
            raise ChainError(f"chain {label} was not measured")
        return self.chains[label]["median"]

    def spread(self, tasks: Sequence[str]) -> float:
        c = self.chains["->".join(tasks)]
        return c["max"] - c["min"]

    def to_dict(self) -> dict:
        return {"chains_nats": self.chains, "identity_residuals": [list(r) for r in self.residuals],
                "venn_knats": self.venn, "tolerance": self.tolerance, "config": self.config}

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path


def _seed_job(args):
    registry, cfg, seed = args
    cache = ModelCache()
    return {"->".join(c): run_chain(c, registry, cfg, seed, cache) for c in cfg.chains}


def dissect(registry: TaskRegistry, cfg: DissectConfig = DissectConfig(), jobs: Optional[int] = None) -> DissectionReport:
    per_seed = run_jobs(_seed_job, [(registry, cfg, s) for s in cfg.seeds], jobs)
    chains = {}
    for c in cfg.chains:
        label = "->".join(c)
        vals = np.array([r[label] for r in per_seed])
        chains[label] = {"median": float(np.median(vals)), "min": float(vals.min()), "max": float(vals.max()),
                         "values": vals.tolist()}
    rep = DissectionReport(chains, [], {}, cfg.tolerance, cfg.to_dict())
    rep.residuals = check_identities(rep)
    if _measured(rep, [(V,), (A,), (V, A), (A, V), (VA,)]):
        rep.venn = venn_decompose(rep)
    return rep


def identity_sides(report: DissectionReport, ident) -> tuple[float, float]:
    _, terms, rhs = ident
    lhs = sum(sign * report.value(ch) for sign, ch in terms)
    return lhs, report.value(rhs)


def _measured(report: DissectionReport, chains) -> bool:
    return all("->".join(c) in report.chains for c in chains)


def check_identities(report: DissectionReport) -> list[tuple[str, Optional[float]]]:
    """|lhs - rhs| / |rhs| for every identity whose chains were measured.

    ``None`` flags a zero right-hand side.
    """
    out = []
    for ident in IDENTITIES:
        if not _measured(report, [ident[2]] + [c for _, c in ident[1]]):
            continue
        lhs, rhs = identity_sides(report, ident)
        out.append((ident[0], None if rhs == 0 else abs(lhs - rhs) / abs(rhs)))
    return out


def venn_decompose(report: DissectionReport) -> dict:
    """Shared and specific information of T_V and T_A, plus the category component (k-nats)."""
    LV, LA = report.value((V,)), report.value((A,))
    shared_a = LA - report.value((V, A))
    shared_v = LV - report.value((A, V))
    flags = []
    if shared_a < 0 or shared_v < 0:
        flags.append("shared clipped")
    shared_a, shared_v = max(0.0, shared_a), max(0.0, shared_v)
    spec_v, spec_a = LV - shared_a, LA - shared_a
    if spec_v < 0 or spec_a < 0:
        flags.append("specific clipped")
    gap = abs(shared_a - shared_v) / max(shared_a, shared_v) if max(shared_a, shared_v) > 0 else 0.0
    return {
        "shared": shared_a / 1000, "shared_alt": shared_v / 1000, "shared_gap": gap,
        "specific_V": max(0.0, spec_v) / 1000, "specific_A": max(0.0, spec_a) / 1000,
        "category": report.value((VA,)) / 1000, "flags": flags,
    }


def forgetting(report: DissectionReport, T: str, T2: str) -> float:
    """F = L(T -> T' -> T): information about T lost while learning T'."""
    return report.value((T, T2, T))


def venn_svg(venn: dict, width: int = 420, height: int = 320) -> str:
    """Three circles (T_V, T_A, T_V/A) with areas proportional to their k-nats."""
    parts = {"T_V": venn["specific_V"] + venn["shared"], "T_A": venn["specific_A"] + venn["shared"],
             "T_V/A": venn["category"]}
    top = max(max(parts.values()), 1e-12)
    rmax = 90.0
    radius = {k: rmax * math.sqrt(max(v, 0.0) / top) for k, v in parts.items()}
    rv, ra = radius["T_V"], radius["T_A"]
    # overlap depth of the first two circles follows the shared fraction of the smaller one
    small = min(rv, ra)
    frac = venn["shared"] / max(min(parts["T_V"], parts["T_A"]), 1e-12)
    dist = rv + ra - 2 * small * min(max(frac, 0.0), 1.0)
    cx = width / 2
    centers = {"T_V": (cx - dist / 2, 130.0), "T_A": (cx + dist / 2, 130.0), "T_V/A": (cx, 130.0 + 0.8 * rmax)}
    colors = {"T_V": "#1f77b4", "T_A": "#d62728", "T_V/A": "#2ca02c"}
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">']
    for name in ("T_V", "T_A", "T_V/A"):
        x, y = centers[name]
        lines.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius[name]:.2f}" fill="{colors[name]}" '
                     f'fill-opacity="0.3" stroke="{colors[name]}"/>')
        lines.append(f'<text x="{x:.2f}" y="{y - radius[name] - 4:.2f}" text-anchor="middle" '
                     f'font-size="12">{name}: {parts[name]:.3f} k-nats</text>')
    lines.append(f'<text x="{cx:.2f}" y="{height - 10}" text-anchor="middle" font-size="11">'
                 f'shared {venn["shared"]:.3f} k-nats, V only {venn["specific_V"]:.3f}, '
                 f'A only {venn["specific_A"]:.3f}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
