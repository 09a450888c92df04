"""Prequential codelengths over an ordered example stream.

The stream is cut into geometrically growing segments. Segment 0 is coded
either uniformly or by the initial model; every later segment is coded by a
model trained on everything before it. Codelengths are in nats.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .datakit import LabeledDataset
from .models import ModelState, TrainConfig, example_nll, save_checkpoint, train
from .numkit import RngStream

CSV_COLUMNS = ["segment", "t_start", "t_end", "codelength_nats", "mean_nats", "heldout_nll", "clamps"]
EXACT_LIMIT = 256


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionSchedule:
    boundaries: tuple[int, ...]
    growth: float
    t1: int

    @property
    def n(self) -> int:
        return self.boundaries[-1]

    @property
    def S(self) -> int:
        return len(self.boundaries) - 1

    @property
    def sizes(self) -> list[int]:
        b = self.boundaries
        return [b[i + 1] - b[i] for i in range(len(b) - 1)]

    def segments(self):
        b = self.boundaries
        return [(b[i], b[i + 1]) for i in range(len(b) - 1)]


def make_schedule(n: int, t1: int = 8, g: float = 1.5, required: Sequence[int] = ()) -> PartitionSchedule:
    """Segment sizes t1, round(g*t1), ... with the last boundary clamped to ``n``.

    ``required`` boundaries are spliced in afterwards; they split a segment
    without shifting any of the geometric boundaries.
    """
    if not (1 <= t1 <= n):
        raise ScheduleError(f"need 1 <= t1 <= n, got t1={t1}, n={n}")
    if not g > 1:
        raise ScheduleError("growth factor must exceed 1")
    bounds = [0]
    size = t1
    while bounds[-1] < n:
        bounds.append(min(n, bounds[-1] + size))
        size = max(size + 1, int(math.floor(g * size + 0.5)))
    extra = {int(r) for r in required if 0 < r < n}
    return PartitionSchedule(tuple(sorted(set(bounds) | extra)), float(g), int(t1))


def unit_schedule(n: int) -> PartitionSchedule:
    if n < 1:
        raise ScheduleError("empty stream")
    return PartitionSchedule(tuple(range(n + 1)), 1.0, 1)


@dataclass(frozen=True)
class PreqConfig:
    t1: int = 8
    growth: float = 1.5
    train: TrainConfig = field(default_factory=TrainConfig)
    warm_start: bool = True
    first_segment_mode: Optional[str] = None  # None: uniform for fresh models, model for trained ones

    def __post_init__(self):
        if self.t1 < 1 or not self.growth > 1:
            raise ValueError("need t1 >= 1 and growth > 1")
        if self.first_segment_mode not in (None, "uniform", "model"):
            raise ValueError(f"unknown first segment mode {self.first_segment_mode!r}")

    def mode_for(self, theta0: ModelState) -> str:
        if self.first_segment_mode:
            return self.first_segment_mode
        return "model" if theta0.pretrained else "uniform"

    def to_dict(self) -> dict:
        return {"t1": self.t1, "growth": self.growth, "warm_start": self.warm_start,
                "first_segment_mode": self.first_segment_mode, "train": self.train.to_dict()}


@dataclass
class SegmentRecord:
    segment: int
    t_start: int
    t_end: int
    codelength: float
    mean: float
    heldout_nll: float
    clamps: int
    checkpoint: str

    def row(self) -> list:
        return [self.segment, self.t_start, self.t_end, repr(self.codelength), repr(self.mean),
                repr(self.heldout_nll), self.clamps]


@dataclass
class CodingCurve:
    schedule: PartitionSchedule
    records: list[SegmentRecord]
    initial_id: str
    fingerprint: str
    first_segment_mode: str
    warm_start: bool
    per_example: np.ndarray
    stream: str = ""
    config: dict = field(default_factory=dict)
    models: list = field(default_factory=list, repr=False)
    final_model: Optional[ModelState] = field(default=None, repr=False)

    @property
    def total(self) -> float:
        return float(sum(r.codelength for r in self.records))

    @property
    def clamps(self) -> int:
        return sum(r.clamps for r in self.records)

    def cumulative(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([r.codelength for r in self.records])])

    def model_at(self, boundary: int) -> ModelState:
        """The model trained on the first ``boundary`` examples (segment model at that boundary)."""
        if boundary == self.schedule.n and self.final_model is not None:
            return self.final_model
        try:
            s = self.schedule.boundaries.index(boundary)
        except ValueError:
            raise ScheduleError(f"{boundary} is not a schedule boundary") from None
        if s >= len(self.models):
            raise ScheduleError(f"no model stored for boundary {boundary}")
        return self.models[s]

    def sidecar(self) -> dict:
        return {
            "schedule": {"boundaries": list(self.schedule.boundaries), "growth": self.schedule.growth,
                         "t1": self.schedule.t1},
            "initial_model": self.initial_id,
            "dataset": self.fingerprint,
            "first_segment_mode": self.first_segment_mode,
            "warm_start": self.warm_start,
            "stream": self.stream,
            "checkpoints": [r.checkpoint for r in self.records],
            "total_nats": self.total,
            "clamps": self.clamps,
            "config": self.config,
        }

    def write(self, stem, checkpoints_dir=None) -> list[Path]:
        """Write ``<stem>.csv`` and ``<stem>.json``; optionally every segment model."""
        stem = Path(stem)
        csv_path = stem.with_suffix(".csv")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.records:
                w.writerow(r.row())
        side = self.sidecar()
        written = [csv_path]
        if checkpoints_dir is not None:
            cdir = Path(checkpoints_dir)
            cdir.mkdir(parents=True, exist_ok=True)
            for m in self.models:
                p = cdir / f"{m.checkpoint_id()}.pqnf"
                if not p.exists():
                    save_checkpoint(m, p)
                    written.append(p)
        json_path = stem.with_suffix(".json")
        json_path.write_text(json.dumps(side, indent=2, sort_keys=True))
        written.append(json_path)
        return written


def read_curve_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(CSV_COLUMNS) - set(rows[0]):
        raise ValueError(f"{path}: not a coding-curve CSV")
    out = []
    for r in rows:
        out.append({"segment": int(r["segment"]), "t_start": int(r["t_start"]), "t_end": int(r["t_end"]),
                    "codelength_nats": float(r["codelength_nats"]), "mean_nats": float(r["mean_nats"]),
                    "heldout_nll": float(r["heldout_nll"]), "clamps": int(r["clamps"])})
    return out


def _uniform_costs(model: ModelState, data: LabeledDataset) -> np.ndarray:
    if data.spans is not None:
        return np.full(len(data), math.log(data.K))
    if data.blocks is not None:
        return np.log((data.blocks[:, 1] - data.blocks[:, 0]).astype(np.float64))
    return np.full(len(data), math.log(model.head.k))


def code_with_schedule(theta0: ModelState, data: LabeledDataset, schedule: PartitionSchedule, cfg: PreqConfig,
                       rng: Optional[RngStream] = None, train_final: bool = False) -> CodingCurve:
    if schedule.n != len(data):
        raise ScheduleError("schedule does not cover the data")
    rng = rng or RngStream(cfg.train.seed, ("preq",))
    mode = cfg.mode_for(theta0)
    per_example = np.zeros(len(data))
    records: list[SegmentRecord] = []
    models: list[ModelState] = []
    prev = theta0
    for s, (a, b) in enumerate(schedule.segments()):
        seg = data[a:b]
        if s == 0:
            model = theta0
            if mode == "uniform":
                costs, clamps = _uniform_costs(theta0, seg), 0
            else:
                costs, clamps = example_nll(theta0, seg)
            held = float("nan")
        else:
            start = prev if cfg.warm_start else theta0
            model = train(start, data[:a], cfg.train, rng.child("segment", s))
            held = float(model.lineage[-1]["heldout_nll"])
            costs, clamps = example_nll(model, seg)
            prev = model
        per_example[a:b] = costs
        total = float(costs.sum())
        records.append(SegmentRecord(s, a, b, total, total / (b - a), held, int(clamps), model.checkpoint_id()))
        models.append(model)
    final = None
    if train_final:
        start = prev if cfg.warm_start else theta0
        final = train(start, data, cfg.train, rng.child("segment", schedule.S))
    return CodingCurve(schedule, records, theta0.checkpoint_id(), data.fingerprint(), mode, cfg.warm_start,
                       per_example, rng.describe(), cfg.to_dict(), models, final)


def preq_code(theta0: ModelState, data: LabeledDataset, cfg: PreqConfig = PreqConfig(),
              rng: Optional[RngStream] = None, required: Sequence[int] = (), train_final: bool = False) -> CodingCurve:
    """Partitioned prequential code of ``data`` starting from ``theta0``."""
    if len(data) < 1:
        raise ValueError("cannot code an empty stream")
    t1 = min(cfg.t1, len(data))
    sched = make_schedule(len(data), t1, cfg.growth, required)
    return code_with_schedule(theta0, data, sched, cfg, rng, train_final)


def preq_exact(theta0: ModelState, data: LabeledDataset, cfg: PreqConfig = PreqConfig(),
               rng: Optional[RngStream] = None, limit: int = EXACT_LIMIT) -> CodingCurve:
    """Per-example prequential code: one retraining per example. Only for tiny streams."""
    if len(data) > limit:
        raise ValueError(f"exact coding retrains once per example; n={len(data)} exceeds the guard of {limit}")
    return code_with_schedule(theta0, data, unit_schedule(len(data)), cfg, rng)


def validation_nll(curve: CodingCurve, val: LabeledDataset) -> list[float]:
    """Mean NLL on an independent ``val`` set of the model that coded each segment."""
    if len(curve.models) < len(curve.records):
        raise ScheduleError("curve does not store its segment models")
    return [float(example_nll(m, val)[0].mean()) for m in curve.models[:len(curve.records)]]


def curve_prefix(curve: CodingCurve, n_prime: int) -> float:
    """Exact codelength of the first ``n_prime`` examples (``n_prime`` must be a boundary)."""
    if n_prime not in curve.schedule.boundaries:
        raise ScheduleError(f"{n_prime} is not a schedule boundary")
    s = curve.schedule.boundaries.index(n_prime)
    return float(sum(r.codelength for r in curve.records[:s]))


def curve_suffix(curve: CodingCurve, n_prime: int) -> float:
    """Codelength of the examples after boundary ``n_prime``, coded from the model at that boundary."""
    if n_prime not in curve.schedule.boundaries:
        raise ScheduleError(f"{n_prime} is not a schedule boundary")
    s = curve.schedule.boundaries.index(n_prime)
    return float(sum(r.codelength for r in curve.records[s:]))
