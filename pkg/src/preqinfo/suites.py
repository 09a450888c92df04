"""Acceptance suites: one check per criterion, sharing expensive runs through a context."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import analysis as an
from .continual import (ContinualConfig, MethodSpec, continual_suite, estimate_fisher, imm_merge, ratio_kept,
                        retrain_head, run_methods, single_task_reference, train_task)
from .datakit import (LabeledDataset, gen_bigram_corpus, gen_hier_classification, oracle_model_info, permute_labels,
                      randomize_labels)
from .infomeasure import bound_report, information_advantage, information_transfer
from .jobs import run_jobs
from .models import ModelSpec, TrainConfig, example_nll, init_model, nll_grad, reset_head, train
from .numkit import RngStream, numeric_grad, rel_error
from .preqcode import (PreqConfig, curve_prefix, curve_suffix, preq_code, preq_exact, read_curve_csv,
                       validation_nll)

SEEDS = (0, 1, 2)
TRAIN = TrainConfig(lr=1e-3)
PREQ = PreqConfig(train=TRAIN)

BIGRAM = {"V": 20, "ms": (2, 5, 10, 20), "n": 4000, "k": 2000, "embed": 16, "alpha": 0.1, "val": 2000}
HIER10 = {"categories": 2, "classes_per_cat": 5, "d_in": 16, "separation": (4.0, 2.0), "sigma2": 1.0, "hidden": 16}
PERMUTED = dict(HIER10, d_in=64, hidden=8)
DISSECT = {"classes_per_cat": (2, 3), "d_in": 16, "separation": (4.0, 2.0), "sigma2": 1.0, "n": 3000, "k": 1500,
           "hidden": 32, "offset_rank": 1}
CONTINUAL = {"tasks": 4, "classes": 3, "d_in": 16, "separation": (4.0, 2.0), "sigma2": 1.0, "hidden": 32,
             "n_train": 1000, "n_stream": 1000, "n_eval": 500, "future_budget": 200}
METHODS = (MethodSpec("plain"), MethodSpec("l2", c=1.0), MethodSpec("ewc", c=100.0),
           MethodSpec("imm", merge="mean"), MethodSpec("imm", merge="mode"),
           MethodSpec("imm", merge="mean", transfer="l2", c=1.0), MethodSpec("imm", merge="mode", transfer="l2", c=1.0),
           MethodSpec("multitask"))


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: dict
    threshold: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}: {self.threshold} ({self.seconds:.0f}s)"

    def to_dict(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": bool(self.passed), "measured": self.measured,
                "threshold": self.threshold, "seconds": self.seconds}


@dataclass
class Context:
    """Memo of runs shared between criteria (bigram suite, dissection, continual)."""

    seeds: tuple[int, ...] = SEEDS
    jobs: Optional[int] = None
    memo: dict = field(default_factory=dict)

    def get(self, key, fn: Callable):
        if key not in self.memo:
            self.memo[key] = fn()
        return self.memo[key]


def _median(xs) -> float:
    return float(np.median(np.asarray(xs, dtype=np.float64)))


def hier10(n: int, rng: RngStream, p: dict = HIER10):
    return gen_hier_classification(p["categories"], p["classes_per_cat"], p["d_in"], p["separation"], p["sigma2"],
                                   n, rng)


def mlp_for(data, rng: RngStream, hidden: int = HIER10["hidden"]):
    return init_model(ModelSpec.mlp(data.inputs.shape[1], hidden, data.K), rng)


# ---------------------------------------------------------------------------
# 1-3: coding identities
# ---------------------------------------------------------------------------


def criterion_1(ctx: Context) -> CriterionResult:
    data, _ = hier10(1000, RngStream(0, ("c1", "data")))
    theta0 = init_model(ModelSpec.softmax_regression(data.inputs.shape[1], data.K), RngStream(0, ("c1",)), scale=0.0)
    cfg = PreqConfig(train=TrainConfig(lr=0.0), first_segment_mode="model")
    total = preq_code(theta0, data, cfg, RngStream(0, ("c1", "code"))).total
    expect = len(data) * math.log(data.K)
    err = abs(total - expect)
    return CriterionResult(1, "uniform-coder identity", err <= 1e-9, {"total_nats": total, "n_lnK": expect,
                                                                       "abs_error": err}, "|L - n ln K| <= 1e-9")


def _c2_job(seed: int) -> float:
    r = RngStream(seed, ("c2",))
    data, _ = gen_bigram_corpus(20, 5, 32, 0.1, r.child("data"))
    theta0 = init_model(ModelSpec.bigram_lm(20, BIGRAM["embed"]), r.child("init"))
    part = preq_code(theta0, data, PREQ, r.child("code")).total
    exact = preq_exact(theta0, data, PREQ, r.child("code")).total
    return abs(part - exact) / exact


def criterion_2(ctx: Context) -> CriterionResult:
    rel = run_jobs(_c2_job, ctx.seeds, ctx.jobs)
    med = _median(rel)
    return CriterionResult(2, "partition approximation", med <= 0.10, {"relative_gap": rel, "median": med},
                           "median |partition - exact| / exact <= 0.10")


def criterion_3(ctx: Context, workdir: Optional[Path] = None) -> CriterionResult:
    r = RngStream(0, ("c3",))
    data, _ = gen_bigram_corpus(20, 5, 600, 0.1, r.child("data"))
    theta0 = init_model(ModelSpec.bigram_lm(20, BIGRAM["embed"]), r.child("init"))
    curve = preq_code(theta0, data, PREQ, r.child("code"))
    if workdir is not None:
        curve.write(Path(workdir) / "telescoping_curve")
        rows = read_curve_csv(Path(workdir) / "telescoping_curve.csv")
        total = sum(row["codelength_nats"] for row in rows)
    else:
        total = curve.total
    worst = max(abs(curve_prefix(curve, b) + curve_suffix(curve, b) - total) for b in curve.schedule.boundaries)
    return CriterionResult(3, "telescoping identity", worst <= 1e-9, {"max_abs_error": worst,
                                                                      "boundaries": len(curve.schedule.boundaries)},
                           "prefix + suffix = total within 1e-9 at every boundary")


# ---------------------------------------------------------------------------
# 4-6, 10: L_IT on tasks with known ground truth
# ---------------------------------------------------------------------------


def _c4_job(seed: int) -> float:
    r = RngStream(seed, ("c4",))
    data, _ = hier10(3000, r.child("data"))
    data = randomize_labels(data, r.child("labels"))
    theta0 = mlp_for(data, r.child("init"))
    return information_transfer(theta0, data, 2000, 1000, PREQ, r.child("lit")).value


def criterion_4(ctx: Context) -> CriterionResult:
    vals = run_jobs(_c4_job, ctx.seeds, ctx.jobs)
    bound = 0.05 * 1000 * math.log(10)
    med = _median(np.abs(vals))
    return CriterionResult(4, "random-label null", med <= bound, {"L_IT_nats": vals, "median_abs": med,
                                                                  "bound": bound}, "median |L_IT| <= 0.05 k ln K")


def _bigram_job(args) -> dict:
    m, seed = args
    p = BIGRAM
    r = RngStream(seed, ("bigram", m))
    data, tm = gen_bigram_corpus(p["V"], m, p["n"] + p["k"], p["alpha"], r.child("data"))
    theta0 = init_model(ModelSpec.bigram_lm(p["V"], p["embed"]), r.child("init"))
    lit = information_transfer(theta0, data, p["n"], p["k"], PREQ, r.child("lit"), ref_span=p["n"])
    b = bound_report(theta0, data, p["n"], p["k"], tm, PREQ, lit=lit)
    # an independent validation draw from the same table, so segment models are scored without selection bias
    vx, vy = tm.sample(p["val"], r.child("val").generator())
    val = validation_nll(lit.ref_curve, LabeledDataset(vx, vy, p["V"], np.arange(len(vy))))
    segs = [(rec.t_end - rec.t_start, rec.mean, v, rec.heldout_nll)
            for rec, v in zip(lit.ref_curve.records[1:], val[1:])]
    return {"m": m, "seed": seed, "oracle": oracle_model_info(tm), "lit": lit.value, "bound": b.to_dict(),
            "lower_ok": b.lower_ok(), "upper_ok": b.upper_ok(), "segments": segs,
            "clamps": lit.ref_curve.clamps + lit.model_curve.clamps}


def bigram_runs(ctx: Context) -> list[dict]:
    items = [(m, s) for m in BIGRAM["ms"] for s in ctx.seeds]
    return ctx.get("bigram", lambda: run_jobs(_bigram_job, items, ctx.jobs))


def criterion_5(ctx: Context) -> CriterionResult:
    runs = bigram_runs(ctx)
    ms = BIGRAM["ms"]
    med = [_median([r["lit"] for r in runs if r["m"] == m]) for m in ms]
    oracle = [_median([r["oracle"] for r in runs if r["m"] == m]) for m in ms]
    rho = float(np.corrcoef(med, oracle)[0, 1])
    return CriterionResult(5, "correlation with ground truth", rho >= 0.9,
                           {"m": list(ms), "median_L_IT_nats": med, "oracle_nats": oracle, "pearson_r": rho},
                           "Pearson r(median L_IT, oracle info) >= 0.9")


def criterion_6(ctx: Context) -> CriterionResult:
    runs = bigram_runs(ctx)
    lower = [r["lower_ok"] for r in runs]
    upper = [r["upper_ok"] for r in runs]
    detail = [{"m": r["m"], "seed": r["seed"], "L_IT": r["lit"], "k_lit_one": r["bound"]["k_lit_one"],
               "lit_infty_oracle": r["bound"]["lit_infty_oracle"], "lower_ok": r["lower_ok"],
               "upper_ok": r["upper_ok"]} for r in runs]
    return CriterionResult(6, "bound sandwich", all(lower) and all(upper),
                           {"runs": detail, "lower_pass": sum(lower), "upper_pass": sum(upper), "total": len(runs)},
                           "k*lit_one - 3sd <= L_IT <= lit_infty + 3sd on every run")


def criterion_10(ctx: Context) -> CriterionResult:
    runs = bigram_runs(ctx)
    worst, worst_es, checked = 0.0, 0.0, 0
    for r in runs:
        for size, mean, val, held in r["segments"]:
            if size >= 64:
                checked += 1
                worst = max(worst, abs(mean - val) / val)
                worst_es = max(worst_es, abs(mean - held) / held)
    return CriterionResult(10, "coding curve tracks validation loss", checked > 0 and worst <= 0.25,
                           {"segments_checked": checked, "max_relative_gap": worst,
                            "max_relative_gap_early_stopping_tail": worst_es},
                           "|segment nats/example - validation NLL| / validation NLL <= 0.25 for segments >= 64")


# ---------------------------------------------------------------------------
# 7-9: transfer on the hierarchical suite
# ---------------------------------------------------------------------------


def dissect_config(seeds: Sequence[int]) -> an.DissectConfig:
    p = DISSECT
    return an.DissectConfig(n=p["n"], k=p["k"], hidden=p["hidden"], heads="fresh", preq=PREQ, seeds=tuple(seeds))


def dissection(ctx: Context) -> an.DissectionReport:
    def run():
        p = DISSECT
        reg = an.hier_registry(p["classes_per_cat"], p["d_in"], p["separation"], p["sigma2"], p["n"],
                               p["n"] + p["k"], RngStream(0, ("dissect", "registry")), p["offset_rank"])
        return an.dissect(reg, dissect_config(ctx.seeds), ctx.jobs)
    return ctx.get("dissect", run)


def criterion_7(ctx: Context) -> CriterionResult:
    rep = dissection(ctx)
    pre, scratch = rep.value((an.V, an.A)), rep.value((an.A,))
    return CriterionResult(7, "pretraining reduces new information", pre < scratch,
                           {"L_IT_pretrained_nats": pre, "L_IT_scratch_nats": scratch},
                           "median L_IT(T_A | pretrained on T_V) < median L_IT(T_A | scratch)")


def _c8_job(seed: int) -> tuple[float, float]:
    r = RngStream(seed, ("c8",))
    data, _ = hier10(9000, r.child("data"), PERMUTED)
    pool, stream = data[:3000], data[3000:]
    theta0 = mlp_for(data, r.child("init"), PERMUTED["hidden"])
    scratch = information_transfer(theta0, stream, 3000, 1500, PREQ, r.child("lit", "scratch")).value
    pre = train(theta0, pool, TRAIN, r.child("pretrain"))
    pre = reset_head(pre, "fresh", "permuted", r.child("head"))
    permuted = permute_labels(stream, r.child("perm"))
    transfer = information_transfer(pre, permuted, 3000, 1500, PREQ, r.child("lit", "permuted")).value
    return transfer, scratch


def criterion_8(ctx: Context) -> CriterionResult:
    vals = run_jobs(_c8_job, ctx.seeds, ctx.jobs)
    t, s = _median([v[0] for v in vals]), _median([v[1] for v in vals])
    return CriterionResult(8, "permuted-label analog", t <= 0.5 * s,
                           {"L_IT_permuted_pretrained_nats": t, "L_IT_original_scratch_nats": s, "runs": vals},
                           "median L_IT(permuted | pretrained) <= 0.5 x median L_IT(original | scratch)")


def criterion_9(ctx: Context) -> CriterionResult:
    rep = dissection(ctx)
    res = {name: r for name, r in rep.residuals}
    ok = len(res) == len(an.IDENTITIES) and all(r is not None and r <= 0.2 for r in res.values())
    return CriterionResult(9, "dissection identities", ok, {"residuals": res, "venn": rep.venn},
                           "all seven relative residuals <= 0.2")


# ---------------------------------------------------------------------------
# 11-13: continual learning
# ---------------------------------------------------------------------------


def continual_setup(ctx: Context):
    def build():
        p = CONTINUAL
        tasks, future = continual_suite(p["tasks"], p["classes"], p["d_in"], p["separation"], p["sigma2"],
                                        p["n_train"], p["n_stream"], p["n_eval"], RngStream(0, ("continual", "suite")))
        cfg = ContinualConfig(hidden=p["hidden"], train=TRAIN, preq=PREQ, future_budget=p["future_budget"])
        return tasks, future, cfg
    return ctx.get("continual-setup", build)


def continual_results(ctx: Context, strategy: str, methods: Sequence[MethodSpec]) -> dict:
    """{(method label, seed): ContinualResult}, computed once per (strategy, method)."""
    tasks, future, cfg = continual_setup(ctx)
    out, todo = {}, []
    for m in methods:
        key = ("continual", strategy, m.label)
        if key in ctx.memo:
            out.update(ctx.memo[key])
        else:
            todo.append(m)
    if todo:
        res = run_methods(tasks, todo, strategy, cfg, ctx.seeds, future, ctx.jobs)
        it = iter(res)
        fresh = {}
        for s in ctx.seeds:
            for m in todo:
                fresh[(m.label, s)] = next(it)
        for m in todo:
            ctx.memo[("continual", strategy, m.label)] = {k: v for k, v in fresh.items() if k[0] == m.label}
        out.update(fresh)
    return out


def criterion_11(ctx: Context) -> CriterionResult:
    res = continual_results(ctx, "separate", METHODS)
    labels = [m.label for m in METHODS]
    past = {lab: _median([res[(lab, s)].all_past["L_IA_sum_nats"] for s in ctx.seeds]) for lab in labels}
    joint = {lab: _median([res[(lab, s)].all_past["L_IA_joint_nats"] for s in ctx.seeds]) for lab in labels}
    acc = {lab: _median([res[(lab, s)].all_past["accuracy"] for s in ctx.seeds]) for lab in labels}
    ratios = [ratio_kept(res[("plain", s)]) for s in ctx.seeds]
    first = _median([r[0]["ratio"] for r in ratios])
    last = _median([r[-1]["ratio"] for r in ratios])
    mt = past["multitask"]
    a = all(mt >= v for lab, v in past.items() if lab != "multitask")
    b = past["plain"] >= 0.5 * mt
    c = last > first
    return CriterionResult(11, "continual-learning ordering", a and b and c,
                           {"all_past_L_IA_sum_nats": past, "all_past_L_IA_joint_nats": joint,
                            "all_past_accuracy": acc, "plain_ratio_first": first, "plain_ratio_last": last,
                            "multitask_dominates": a, "plain_half_of_multitask": b, "recency": c},
                           "multitask >= every method; plain >= 0.5 x multitask; plain ratio last > first")


def criterion_12(ctx: Context) -> CriterionResult:
    ewc = [m for m in METHODS if m.kind == "ewc"]
    med = {}
    for strategy in ("separate", "union", "reuse"):
        res = continual_results(ctx, strategy, ewc)
        med[strategy] = _median([res[(ewc[0].label, s)].all_past["L_IA_sum_nats"] for s in ctx.seeds])
    sep, uni, reu = med["separate"], med["union"], med["reuse"]
    close = abs(sep - uni) / max(abs(sep), abs(uni)) < 0.2
    lower = reu < sep and reu < uni
    return CriterionResult(12, "head-strategy claim", close and lower,
                           {"ewc_all_past_L_IA_nats": med, "separate_union_close": close, "reuse_lower": lower},
                           "|separate - union| < 20% relative; reuse < both")


def _c13_job(args) -> tuple[float, float]:
    tasks, cfg, seed = args
    from .continual import run_sequence
    cfg = replace(cfg, seed=seed)
    _, final = run_sequence(tasks, MethodSpec("plain"), "separate", cfg,
                            refs=[single_task_reference(t, i, tasks[0].train.inputs.shape[1], cfg)
                                  for i, t in enumerate(tasks)])
    return retrain_head(final.select("0"), tasks[0].train, cfg.train, tasks[0].eval,
                        RngStream(seed, ("retrain-head",)))


def criterion_13(ctx: Context) -> CriterionResult:
    tasks, _, cfg = continual_setup(ctx)
    pairs = run_jobs(_c13_job, [(tasks, cfg, s) for s in ctx.seeds], ctx.jobs)
    gains = [100 * (after - before) for before, after in pairs]
    med = _median(gains)
    return CriterionResult(13, "head-only recovery", med > 10, {"accuracy_pairs": pairs, "gain_points": gains,
                                                                "median_gain_points": med},
                           "retrain_head on task 0 improves accuracy by > 10 points")


# ---------------------------------------------------------------------------
# 14: exactness micro-suite
# ---------------------------------------------------------------------------


def criterion_14(ctx: Context) -> CriterionResult:
    r = RngStream(0, ("c14",))
    data, _ = hier10(400, r.child("data"))
    theta = train(mlp_for(data, r.child("init")), data[:200], TRAIN, r.child("train"))
    checks = {}
    checks["lia_self_zero"] = information_advantage(theta, theta, data[200:], 150, PREQ, r.child("lia")).value == 0.0
    merged = imm_merge([theta, theta, theta], merge="mean")
    checks["imm_identical"] = bool(np.array_equal(merged.params.values, theta.params.values))

    nxt = reset_head(theta, "separate", "1", r.child("head"))
    fisher = estimate_fisher(theta, data[:200], 100, r.child("fisher"))
    frozen = train_task(nxt, data[200:], MethodSpec("ewc", c=1e12), TRAIN, theta, fisher, r.child("ewc"))
    before = theta.params.remap(frozen.params.layout).values
    anchored = fisher.remap(theta, frozen.params.layout).values > 0
    moved = np.abs(frozen.params.values - before)[anchored]
    checks["ewc_freeze"] = bool(moved.max() <= 1e-3)

    small = data[:16]
    worst = 0.0
    for spec in (ModelSpec.softmax_regression(16, 10), ModelSpec.mlp(16, 8, 10)):
        m = init_model(spec, r.child("grad", spec.kind))
        analytic = nll_grad(m, small)

        def f(v, m=m):
            return float(example_nll(m.with_values(v), small)[0].mean())

        worst = max(worst, rel_error(analytic, numeric_grad(f, m.params.values.copy())))
    bd, _ = gen_bigram_corpus(6, 3, 16, 0.5, r.child("bigram"))
    m = init_model(ModelSpec.bigram_lm(6, 4), r.child("grad", "bigram"))
    worst = max(worst, rel_error(nll_grad(m, bd), numeric_grad(
        lambda v: float(example_nll(m.with_values(v), bd)[0].mean()), m.params.values.copy())))
    checks["gradients"] = bool(worst <= 1e-4)

    a = preq_code(theta, data[200:], PREQ, r.child("rerun"))
    b = preq_code(theta, data[200:], PREQ, r.child("rerun"))
    checks["bit_identical"] = bool(np.array_equal(a.per_example, b.per_example))
    return CriterionResult(14, "exactness micro-suite", all(checks.values()),
                           {**checks, "grad_rel_error": worst, "ewc_max_body_shift": float(moved.max())},
                           "L_IA(t,t)=0; identical IMM merge; EWC freeze 1e-3; grad rel err 1e-4; reruns identical")


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
            7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11, 12: criterion_12,
            13: criterion_13, 14: criterion_14}


def run_criterion(number: int, ctx: Context, workdir: Optional[Path] = None) -> CriterionResult:
    t = time.perf_counter()
    fn = CRITERIA[number]
    res = fn(ctx, workdir) if number == 3 else fn(ctx)
    res.seconds = time.perf_counter() - t
    return res


def run_acceptance(numbers: Sequence[int] = tuple(CRITERIA), ctx: Optional[Context] = None,
                   workdir: Optional[Path] = None, echo: Optional[Callable[[str], None]] = None) -> list[CriterionResult]:
    ctx = ctx or Context()
    out = []
    for n in numbers:
        res = run_criterion(n, ctx, workdir)
        if echo:
            echo(res.line())
        out.append(res)
    return out
