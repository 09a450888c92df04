"""Command-line runner: ``preqinfo <subcommand> --config <file> [--out DIR] [--jobs N] [--seed S]``.

Exit codes: 0 success, 2 invalid config or inputs, 3 acceptance failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import config as cfgmod
from .datakit import (DatasetError, TaskSpec, from_jsonl, gen_bigram_corpus, gen_hier_classification, load_idx,
                      permute_labels, randomize_labels, subtask, to_jsonl)
from .infomeasure import (bound_report, default_k, information_advantage, information_transfer, lit_sweep,
                          median_of, sweep_slope)
from .jobs import resolve_jobs, run_jobs
from .models import (CheckpointError, IncompatibleError, ModelSpec, init_model, load_checkpoint, reset_head,
                     save_checkpoint, train)
from .numkit import RngStream
from .preqcode import CSV_COLUMNS, preq_code, read_curve_csv
from .svgplot import line_chart

EXIT_OK, EXIT_INVALID, EXIT_ACCEPTANCE = 0, 2, 3
SUBCOMMANDS = ("gen-data", "preq", "lit", "lia", "sweep", "dissect", "continual", "acceptance", "plot")


class InputError(ValueError):
    pass


class Emitter:
    """Writes artifacts atomically and records their digests for the manifest."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}

    def _record(self, path: Path) -> Path:
        self.files[str(path.relative_to(self.out))] = hashlib.sha256(path.read_bytes()).hexdigest()
        return path

    def text(self, name: str, content: str) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
        return self._record(path)

    def json(self, name: str, obj) -> Path:
        return self.text(name, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def csv(self, name: str, header: list, rows: list) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return self.text(name, buf.getvalue())

    def adopt(self, paths) -> None:
        """Record files that a library routine wrote directly."""
        for p in paths:
            self._record(Path(p))


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (tuple, set)):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# Building blocks from config sections
# ---------------------------------------------------------------------------


def _generate(section: dict, seed: int, size: int):
    gen = section["generator"]
    rng = RngStream(seed, ("data",))
    try:
        if gen == "bigram":
            return gen_bigram_corpus(section.get("V", 20), section.get("m", 5), size, section.get("alpha", 0.1), rng)
        if gen == "hier":
            return gen_hier_classification(section.get("categories", 2), section.get("classes_per_cat", 5),
                                           section.get("d_in", 16), tuple(section.get("separation", (4.0, 2.0))),
                                           section.get("sigma2", 1.0), size, rng, section.get("offset_rank"))
        if gen == "jsonl":
            return from_jsonl(_need(section, "path"), section.get("K")), None
        return load_idx(_need(section, "images"), _need(section, "labels_path"), section.get("K")), None
    except OSError as e:
        raise InputError(f"cannot read dataset: {e}") from None


def _transform(data, tm, section: dict, seed: int, tag: str):
    if section.get("classes"):
        data, tm = subtask(data, TaskSpec.select("subset", section["classes"])), None
    labels = section.get("labels", "original")
    if labels == "permuted":
        data, tm = permute_labels(data, RngStream(seed, ("labels", tag))), None
    elif labels == "random":
        data, tm = randomize_labels(data, RngStream(seed, ("labels", tag))), None
    return data, tm


def build_data(section: dict, seed: int):
    """Dataset and (for synthetic generators) its TrueModel."""
    data, tm = _generate(section, seed, int(section.get("n", 1000)))
    return _transform(data, tm, section, seed, "data")


def build_pretrain(cfg: dict, seed: int):
    """Main dataset plus a disjoint pretraining pool drawn from the same generator.

    Both come from one draw so synthetic tasks share their geometry or table;
    each part then gets its own label transform.
    """
    main, pre = cfg["data"], cfg["measure"]["pretrain"]
    if pre["generator"] != main["generator"]:
        raise cfgmod.ConfigError("measure.pretrain must use the same generator as data")
    n_main = int(main.get("n", 1000))
    n_pre = int(cfg["measure"].get("pretrain_n", pre.get("n", n_main)))
    if main["generator"] in ("jsonl", "idx"):
        full, tm = _generate(main, seed, n_main)
        if len(full) < n_main + n_pre:
            raise InputError(f"dataset has {len(full)} examples, need {n_main + n_pre} for data plus pretraining")
    else:
        full, tm = _generate(main, seed, n_main + n_pre)
    data, tm = _transform(full[:n_main], tm, main, seed, "data")
    pool, _ = _transform(full[n_main:n_main + n_pre], None, pre, seed, "pretrain")
    return data, tm, pool


def _need(section: dict, key: str):
    if key not in section:
        raise cfgmod.ConfigError(f"data: generator {section['generator']!r} needs {key!r}")
    return section[key]


def build_model(cfg: dict, data, seed: int, key: str = "init"):
    section = cfg.get("model", {})
    path = section.get(key) or (section.get("checkpoint") if key == "init" else None)
    if path:
        try:
            return load_checkpoint(path)
        except OSError as e:
            raise InputError(f"cannot read checkpoint: {e}") from None
    kind = section.get("kind") or ("bigram-lm" if data.is_tokens else "mlp")
    if kind == "bigram-lm":
        spec = ModelSpec.bigram_lm(data.K, section.get("embed_dim", 16))
    elif kind == "mlp":
        spec = ModelSpec.mlp(data.inputs.shape[1], section.get("hidden", 16), data.K)
    else:
        spec = ModelSpec.softmax_regression(data.inputs.shape[1], data.K)
    return init_model(spec, RngStream(seed, ("model", key)))


def _nk(cfg: dict, data) -> tuple[int, int]:
    m = cfg.get("measure", {})
    k = int(m.get("k", default_k(len(data))))
    n = int(m.get("n", max(0, len(data) - k)))
    if n + k > len(data):
        raise cfgmod.ConfigError(f"measure: n + k = {n + k} exceeds the {len(data)} available examples")
    return n, k


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg, seeds, em: Emitter, jobs):
    for s in seeds:
        data, _ = build_data(cfg["data"], s)
        path = em.out / f"dataset_seed{s}.jsonl"
        to_jsonl(data, path)
        em.adopt([path])
        em.json(f"dataset_seed{s}.meta.json", {"n": len(data), "K": data.K, "fingerprint": data.fingerprint(),
                                               "meta": data.meta})
    return EXIT_OK


def cmd_preq(cfg, seeds, em: Emitter, jobs):
    series = []
    for s in seeds:
        data, _ = build_data(cfg["data"], s)
        theta0 = build_model(cfg, data, s)
        curve = preq_code(theta0, data, cfgmod.preq_config(cfg, s), RngStream(s, ("preq",)))
        em.adopt(curve.write(em.out / f"curve_seed{s}"))
        series.append((f"seed {s}", [r.t_end for r in curve.records], curve.cumulative()[1:].tolist()))
    em.text("curves.svg", line_chart(series, "prequential codelength", "examples coded", "cumulative nats"))
    return EXIT_OK


def _lit_job(args):
    cfg, s = args
    m = cfg.get("measure", {})
    pool = None
    if "pretrain" in m:
        data, tm, pool = build_pretrain(cfg, s)
    else:
        data, tm = build_data(cfg["data"], s)
    n, k = _nk(cfg, data)
    theta0 = build_model(cfg, data, s)
    pcfg = cfgmod.preq_config(cfg, s)
    rng = RngStream(s, ("lit",))
    if pool is not None:
        if pool.K > theta0.head.k:
            raise cfgmod.ConfigError("pretraining labels exceed the model's output layer")
        theta0 = train(theta0, pool, pcfg.train, RngStream(s, ("pretrain",)))
        theta0 = reset_head(theta0, "fresh", "target", RngStream(s, ("pretrain", "head")), k=data.K)
    lit = information_transfer(theta0, data, n, k, pcfg, rng, ref_span=max(n, k),
                               shared_seeds=bool(m.get("shared_seeds", False)))
    out = {"seed": s, "report": lit.to_dict()}
    if tm is not None and m.get("true_model", False):
        out["bound"] = bound_report(theta0, data, n, k, tm, pcfg, lit=lit).to_dict()
    return out, lit


def cmd_lit(cfg, seeds, em: Emitter, jobs):
    results = run_jobs(_lit_job, [(cfg, s) for s in seeds], jobs)
    for (rep, lit) in results:
        s = rep["seed"]
        em.json(f"lit_seed{s}.json", rep)
        em.adopt(lit.ref_curve.write(em.out / f"lit_seed{s}_ref"))
        em.adopt(lit.model_curve.write(em.out / f"lit_seed{s}_model"))
    summary = median_of([r[0]["report"]["value_nats"] for r in results])
    em.json("lit_summary.json", {"L_IT_nats": summary, "seeds": list(seeds)})
    print(f"L_IT median {summary['median']:.2f} nats over {len(seeds)} seed(s)")
    return EXIT_OK


def cmd_lia(cfg, seeds, em: Emitter, jobs):
    vals = []
    for s in seeds:
        data, _ = build_data(cfg["data"], s)
        n, k = _nk(cfg, data)
        pcfg = cfgmod.preq_config(cfg, s)
        m = cfg.get("measure", {})
        ref = load_checkpoint(m["reference"]) if m.get("reference") else build_model(cfg, data, s)
        if m.get("theta"):
            theta = load_checkpoint(m["theta"])
            stream = data[:k] if not n else data[n:n + k]
        else:
            theta = train(ref, data[:n], pcfg.train, RngStream(s, ("lia", "theta")))
            stream = data[n:n + k]
            save_checkpoint(theta, em.out / f"theta_seed{s}.pqnf")
            em.adopt([em.out / f"theta_seed{s}.pqnf"])
        rep = information_advantage(theta, ref, stream, k, pcfg, RngStream(s, ("lia",)))
        d = rep.to_dict()
        d["reference_model"], d["model"] = ref.checkpoint_id(), theta.checkpoint_id()
        em.json(f"lia_seed{s}.json", d)
        vals.append(rep.value)
    summary = median_of(vals)
    em.json("lia_summary.json", {"L_IA_nats": summary, "seeds": list(seeds)})
    print(f"L_IA median {summary['median']:.2f} nats over {len(seeds)} seed(s)")
    return EXIT_OK


def cmd_sweep(cfg, seeds, em: Emitter, jobs):
    series = []
    for s in seeds:
        data, _ = build_data(cfg["data"], s)
        m = cfg["measure"]
        k = int(m.get("k", default_k(len(data))))
        grid = m.get("ns") or [int(x) for x in np.unique(np.geomspace(8, len(data) - k, 8).astype(int))]
        theta0 = build_model(cfg, data, s)
        pts = lit_sweep(theta0, data, grid, k, cfgmod.preq_config(cfg, s), RngStream(s, ("sweep",)))
        em.csv(f"sweep_seed{s}.csv", ["n", "L_IT_nats"], [[n, repr(v)] for n, v in pts])
        em.json(f"sweep_seed{s}.json", {"points": pts, "k": k, "label": f"seed {s}",
                                        "slope": sweep_slope(pts, theta0.param_count)})
        series.append((f"seed {s}", [p[0] for p in pts], [p[1] for p in pts]))
    em.text("sweep.svg", line_chart(series, "L_IT versus n", "n", "L_IT (nats)"))
    return EXIT_OK


def cmd_dissect(cfg, seeds, em: Emitter, jobs):
    from . import analysis as an
    d = cfg.get("dissect", {})
    cpc = tuple(d.get("classes_per_cat", (2, 3)))
    n, k = d.get("n", 3000), d.get("k", 1500)
    reg = an.hier_registry(cpc, d.get("d_in", 16), tuple(d.get("separation", (4.0, 2.0))), d.get("sigma2", 1.0), n,
                           n + k, RngStream(seeds[0], ("dissect", "registry")), d.get("offset_rank"))
    dc = an.DissectConfig(n=n, k=k, hidden=d.get("hidden", 32), heads=d.get("heads", "fresh"),
                          preq=cfgmod.preq_config(cfg), seeds=tuple(seeds), tolerance=d.get("tolerance", 0.2))
    rep = an.dissect(reg, dc, jobs)
    em.json("dissection.json", rep.to_dict())
    em.text("venn.svg", an.venn_svg(rep.venn))
    for name, r in rep.residuals:
        print(f"{name:18s} residual {'n/a' if r is None else f'{r:.3f}'}")
    return EXIT_OK


def cmd_continual(cfg, seeds, em: Emitter, jobs):
    from . import continual as cl
    c = cfg.get("continual", {})
    tasks, future = cl.continual_suite(c.get("tasks", 4), c.get("classes", 3), c.get("d_in", 16),
                                       tuple(c.get("separation", (4.0, 2.0))), c.get("sigma2", 1.0),
                                       c.get("n_train", 1000), c.get("n_stream", 1000), c.get("n_eval", 500),
                                       RngStream(seeds[0], ("continual", "suite")), c.get("offset_rank"))
    methods = cfgmod.method_specs(cfg) or [cl.MethodSpec("plain"), cl.MethodSpec("multitask")]
    ccfg = cl.ContinualConfig(hidden=c.get("hidden", 32), train=cfgmod.train_config(cfg),
                              preq=cfgmod.preq_config(cfg), k=c.get("k"), future_budget=c.get("future_budget", 200))
    strategy = c.get("head_strategy", "separate")
    results = cl.run_methods(tasks, methods, strategy, ccfg, seeds, future, jobs)
    for r in results:
        slug = r.method.replace(" ", "").replace("(", "-").replace(")", "")
        em.json(f"continual_{slug}_seed{r.seed}.json", r.to_dict())
    for s in seeds:
        header, rows = cl.table_rows([r for r in results if r.seed == s])
        em.csv(f"continual_table_seed{s}.csv", header, rows)
    return EXIT_OK


def cmd_acceptance(cfg, seeds, em: Emitter, jobs):
    from . import suites
    numbers = cfg.get("acceptance", {}).get("criteria") or list(suites.CRITERIA)
    ctx = suites.Context(seeds=tuple(seeds) if "seeds" in cfg else suites.SEEDS, jobs=jobs)
    results = suites.run_acceptance(numbers, ctx, em.out, echo=print)
    em.adopt(p for p in em.out.glob("telescoping_curve.*"))
    em.json("acceptance.json", [r.to_dict() for r in results])
    em.csv("acceptance.csv", ["criterion", "name", "passed", "seconds"],
           [[r.number, r.name, r.passed, f"{r.seconds:.1f}"] for r in results])
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return EXIT_OK if passed == len(results) else EXIT_ACCEPTANCE


def _plot_series(path: Path):
    try:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), [])
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from None
    side = path.with_suffix(".json")
    label = path.stem
    if side.exists():
        try:
            label = json.loads(side.read_text()).get("label", label)
        except json.JSONDecodeError:
            pass
    if header[:len(CSV_COLUMNS)] == CSV_COLUMNS:
        try:
            rows = read_curve_csv(path)
        except (ValueError, KeyError) as e:
            raise InputError(f"{path}: malformed coding-curve CSV ({e})") from None
        return label, [r["t_end"] for r in rows], np.cumsum([r["codelength_nats"] for r in rows]).tolist()
    if header[:2] == ["n", "L_IT_nats"]:
        with open(path, newline="") as fh:
            try:
                rows = [(int(r["n"]), float(r["L_IT_nats"])) for r in csv.DictReader(fh)]
            except (ValueError, KeyError, TypeError) as e:
                raise InputError(f"{path}: malformed sweep CSV ({e})") from None
        return label, [r[0] for r in rows], [r[1] for r in rows]
    raise InputError(f"{path}: not a coding-curve or sweep CSV")


def cmd_plot(cfg, seeds, em: Emitter, jobs):
    p = cfg["plot"]
    series = [_plot_series(Path(f)) for f in p["inputs"]]
    em.text(p.get("output", "plot.svg"), line_chart(series, p.get("title", ""), "n", "nats", p.get("logx", True)))
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "preq": cmd_preq, "lit": cmd_lit, "lia": cmd_lia, "sweep": cmd_sweep,
            "dissect": cmd_dissect, "continual": cmd_continual, "acceptance": cmd_acceptance, "plot": cmd_plot}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="preqinfo", description="Prequential information measures for trained models.")
    ap.add_argument("--version", action="version", version=f"preqinfo {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", default=None, help="output directory (default: config 'out' or ./runs/<kind>)")
        sp.add_argument("--jobs", type=int, default=None, help="worker processes (fallback: $PREQINFO_JOBS)")
        sp.add_argument("--seed", type=int, default=None, help="run a single seed instead of the config's seeds")
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        cfg = cfgmod.load(args.config)
        if cfg["kind"] != args.command:
            raise cfgmod.ConfigError(f"config kind {cfg['kind']!r} does not match subcommand {args.command!r}")
        jobs = resolve_jobs(args.jobs)
    except (cfgmod.ConfigError, ValueError) as e:
        print(f"preqinfo: invalid configuration: {e}", file=sys.stderr)
        return EXIT_INVALID
    seeds = cfgmod.seeds(cfg, args.seed)
    em = Emitter(Path(args.out or cfg.get("out") or Path("runs") / args.command))
    try:
        code = COMMANDS[args.command](cfg, seeds, em, jobs)
    except (cfgmod.ConfigError, InputError, DatasetError, CheckpointError, IncompatibleError) as e:
        print(f"preqinfo: {e}", file=sys.stderr)
        return EXIT_INVALID
    manifest = {
        "config_hash": cfgmod.config_hash(cfg),
        "config": cfg,
        "version": __version__,
        "command": args.command,
        "seeds": seeds,
        "jobs": jobs,
        "files": dict(sorted(em.files.items())),
        "seconds": round(time.perf_counter() - t0, 3),
        "exit_code": code,
    }
    em.json("manifest.json", manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
