"""Information measures built from pairs of prequential codes.

``information_transfer`` compares coding ``k`` fresh examples from the initial
model against coding them from a model already trained on ``n`` examples.
``information_advantage`` compares two given models on the same stream.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .datakit import LabeledDataset, TrueModel, true_conditional_entropy
from .models import IncompatibleError, ModelState, example_nll, train
from .numkit import RngStream
from .preqcode import CodingCurve, PreqConfig, preq_code


@dataclass
class InfoReport:
    kind: str
    L_preq_ref: float
    L_preq_model: float
    value: float
    n: int
    k: int
    seeds: dict
    curve_ids: dict
    config: dict = field(default_factory=dict)
    ref_curve: Optional[CodingCurve] = field(default=None, repr=False)
    model_curve: Optional[CodingCurve] = field(default=None, repr=False)
    theta_n: Optional[ModelState] = field(default=None, repr=False)

    @property
    def value_knats(self) -> float:
        return self.value / 1000.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "L_preq_ref_nats": self.L_preq_ref, "L_preq_model_nats": self.L_preq_model,
                "value_nats": self.value, "value_knats": self.value_knats, "n": self.n, "k": self.k,
                "seeds": self.seeds, "curve_ids": self.curve_ids, "config": self.config}


@dataclass
class BoundReport:
    lit_one: float
    lit_one_stderr: float
    lit_k: float
    k: int
    n: int
    lit_infty_oracle: float
    lit_infty_stderr: float
    model_info_hat: float

    @property
    def k_lit_one(self) -> float:
        return self.k * self.lit_one

    def lower_ok(self, z: float = 3.0) -> bool:
        return self.k * self.lit_one - z * self.k * self.lit_one_stderr <= self.lit_k

    def upper_ok(self, z: float = 3.0) -> bool:
        return self.lit_k <= self.lit_infty_oracle + z * self.lit_infty_stderr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_lit_one"] = self.k_lit_one
        return d


def default_k(size: int) -> int:
    return min(5000, size // 3)


def _curve_id(curve: CodingCurve) -> str:
    return f"{curve.initial_id}@{curve.fingerprint}"


def information_transfer(theta0: ModelState, data: LabeledDataset, n: int, k: Optional[int] = None,
                         cfg: PreqConfig = PreqConfig(), rng: Optional[RngStream] = None,
                         ref_span: Optional[int] = None, shared_seeds: bool = False,
                         theta_n: Optional[ModelState] = None) -> InfoReport:
    """L_IT(n, k): codelength of ``k`` examples from ``theta0`` minus that from ``theta_n``.

    ``theta_n`` is trained on examples ``[0, n)`` unless supplied. The reference
    curve may be coded over a longer span (``ref_span``) so that its prefixes at
    both ``k`` and ``n`` are available; the codelength of the first ``k`` examples
    is unaffected because ``k`` is made a boundary.
    """
    k = default_k(len(data)) if k is None else int(k)
    if k < 1 or n < 0 or n + k > len(data):
        raise ValueError(f"need n + k <= |data| and k >= 1 (n={n}, k={k}, |data|={len(data)})")
    rng = rng or RngStream(cfg.train.seed, ("lit",))
    ref_rng = rng.child("code") if shared_seeds else rng.child("ref")
    mod_rng = rng.child("code") if shared_seeds else rng.child("model")
    span = max(k, min(ref_span or k, len(data)))
    required = {k} | ({n} if 0 < n < span else set())
    ref_curve = preq_code(theta0, data[:span], cfg, ref_rng, required=sorted(required))
    ref = float(ref_curve.per_example[:k].sum())
    if theta_n is None:
        theta_n = theta0 if n == 0 else train(theta0, data[:n], cfg.train, rng.child("theta_n"))
    # the second term is always model-mode, except for the degenerate self-comparison with
    # shared seeds, which must reproduce the first term exactly
    mode = cfg.mode_for(theta0) if (shared_seeds and n == 0 and theta_n is theta0) else "model"
    model_cfg = PreqConfig(cfg.t1, cfg.growth, cfg.train, cfg.warm_start, mode)
    model_curve = preq_code(theta_n, data[n:n + k], model_cfg, mod_rng)
    mod = model_curve.total
    return InfoReport("L_IT", ref, mod, ref - mod, n, k,
                      {"ref": ref_rng.describe(), "model": mod_rng.describe()},
                      {"ref": _curve_id(ref_curve), "model": _curve_id(model_curve)},
                      cfg.to_dict(), ref_curve, model_curve, theta_n)


def information_advantage(theta: ModelState, theta_ref: ModelState, data: LabeledDataset, k: Optional[int] = None,
                          cfg: PreqConfig = PreqConfig(), rng: Optional[RngStream] = None) -> InfoReport:
    """L_IA(k): codelength under ``theta_ref`` minus codelength under ``theta``, both model-mode."""
    k = min(len(data), default_k(len(data))) if k is None else int(k)
    if k < 1 or k > len(data):
        raise ValueError(f"need 1 <= k <= |data| (k={k})")
    if theta.head.k != theta_ref.head.k and data.blocks is None:
        raise IncompatibleError(f"label spaces differ: {theta.head.k} vs {theta_ref.head.k}")
    rng = rng or RngStream(cfg.train.seed, ("lia",))
    mcfg = PreqConfig(cfg.t1, cfg.growth, cfg.train, cfg.warm_start, "model")
    stream = data[:k]
    ref_curve = preq_code(theta_ref, stream, mcfg, rng.child("code"))
    mod_curve = preq_code(theta, stream, mcfg, rng.child("code"))
    return InfoReport("L_IA", ref_curve.total, mod_curve.total, ref_curve.total - mod_curve.total, 0, k,
                      {"ref": rng.child("code").describe(), "model": rng.child("code").describe()},
                      {"ref": _curve_id(ref_curve), "model": _curve_id(mod_curve)},
                      mcfg.to_dict(), ref_curve, mod_curve)


def lit_one(theta0: ModelState, theta_n: ModelState, eval_set: LabeledDataset) -> tuple[float, float]:
    """Mean per-example NLL reduction of ``theta_n`` over ``theta0`` and its standard error."""
    if len(eval_set) == 0:
        raise ValueError("lit_one needs a non-empty evaluation set")
    a, _ = example_nll(theta0, eval_set)
    b, _ = example_nll(theta_n, eval_set)
    diff = a - b
    se = float(diff.std(ddof=1) / math.sqrt(len(diff))) if len(diff) > 1 else 0.0
    return float(diff.mean()), se


def lit_infty_oracle(curve: CodingCurve, tm: Optional[TrueModel], data: LabeledDataset,
                     n: Optional[int] = None, return_stderr: bool = False):
    """Prequential cost of the first ``n`` coded examples minus their cost under the true model."""
    if tm is None:
        raise ValueError("lit_infty_oracle needs the generating TrueModel")
    n = curve.schedule.n if n is None else int(n)
    if n > len(curve.per_example) or n > len(data):
        raise ValueError("curve or data shorter than n")
    oracle = -tm.log_prob(data.inputs[:n], data.labels[:n])
    gap = curve.per_example[:n] - oracle
    value = float(gap.sum())
    if not return_stderr:
        return value
    se = float(gap.std(ddof=1) * math.sqrt(n)) if n > 1 else 0.0
    return value, se


def model_info_hat(L_preq: float, n: int, tm: TrueModel, entropy: Optional[float] = None) -> float:
    """Codelength minus the incompressible noise ``n * H(Y|X)``."""
    H = true_conditional_entropy(tm) if entropy is None else entropy
    return float(L_preq - n * H)


def bound_report(theta0: ModelState, data: LabeledDataset, n: int, k: int, tm: TrueModel,
                 cfg: PreqConfig = PreqConfig(), rng: Optional[RngStream] = None,
                 lit: Optional[InfoReport] = None) -> BoundReport:
    """All sandwich quantities for one run; the evaluation stream is ``[n, n + k)``."""
    if lit is None:
        lit = information_transfer(theta0, data, n, k, cfg, rng, ref_span=max(n, k))
    if lit.ref_curve is None or len(lit.ref_curve.per_example) < n:
        raise ValueError("the reference curve must span the first n examples")
    one, se = lit_one(theta0, lit.theta_n, data[n:n + k])
    inf, inf_se = lit_infty_oracle(lit.ref_curve, tm, data, n, return_stderr=True)
    L_n = float(lit.ref_curve.per_example[:n].sum())
    return BoundReport(one, se, lit.value, k, n, inf, inf_se, model_info_hat(L_n, n, tm))


def lit_sweep(theta0: ModelState, data: LabeledDataset, n_grid: Sequence[int], k: Optional[int] = None,
              cfg: PreqConfig = PreqConfig(), rng: Optional[RngStream] = None) -> list[tuple[int, float]]:
    """L_IT at each ``n`` in the grid, sharing one scratch curve for all reference terms and ``theta_n``.

    The scratch curve spans ``max(max(n_grid), k)`` with every grid point as a
    boundary, so each ``theta_n`` is the segment model trained on exactly the
    first ``n`` examples.
    """
    grid = sorted({int(x) for x in n_grid})
    k = default_k(len(data)) if k is None else int(k)
    if not grid or grid[0] < 0 or grid[-1] + k > len(data):
        raise ValueError("max(n_grid) + k exceeds the data")
    rng = rng or RngStream(cfg.train.seed, ("sweep",))
    span = max(grid[-1], k)
    curve = preq_code(theta0, data[:span], cfg, rng.child("ref"), required=[k] + grid, train_final=True)
    ref = float(curve.per_example[:k].sum())
    model_cfg = PreqConfig(cfg.t1, cfg.growth, cfg.train, cfg.warm_start, "model")
    out = []
    for n in grid:
        if n == 0:
            out.append((0, 0.0))
            continue
        theta_n = curve.model_at(n)
        mc = preq_code(theta_n, data[n:n + k], model_cfg, rng.child("model", n))
        out.append((n, ref - mc.total))
    return out


def sweep_slope(points: Sequence[tuple[int, float]], d: int) -> dict:
    """Least-squares slope of L_IT against ln n, reported next to d/2."""
    pts = [(n, v) for n, v in points if n > 0]
    if len(pts) < 2:
        return {"slope": float("nan"), "half_d": d / 2}
    x = np.log([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    slope = float(np.polyfit(x, y, 1)[0])
    return {"slope": slope, "half_d": d / 2}


def median_of(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {"median": float(np.median(v)), "min": float(v.min()), "max": float(v.max()), "values": v.tolist()}


def write_json(obj, path) -> Path:
    path = Path(path)
    payload = obj.to_dict() if hasattr(obj, "to_dict") else obj
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float))
    return path
