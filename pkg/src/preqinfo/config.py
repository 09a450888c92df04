"""Experiment configuration: JSON files validated against a closed schema."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Optional

import jsonschema

from .continual import MethodSpec
from .models import TrainConfig
from .preqcode import PreqConfig

KINDS = ("gen-data", "preq", "lit", "lia", "sweep", "dissect", "continual", "acceptance", "plot")


class ConfigError(ValueError):
    pass


def _obj(props: dict, required: tuple = ()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_INT = {"type": "integer"}
_POS = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_INTS = {"type": "array", "items": _INT}

TRAIN = _obj({
    "optimizer": {"enum": ["adam", "sgd"]}, "lr": {"type": "number", "minimum": 0}, "beta1": _NUM, "beta2": _NUM,
    "eps": _NUM, "batch_size": _POS, "max_epochs": {"type": "integer", "minimum": 0}, "patience": _POS,
    "heldout_fraction": _NUM, "min_heldout": _INT, "min_delta": _NUM,
})
PREQ = _obj({"t1": _POS, "growth": {"type": "number", "exclusiveMinimum": 1}, "warm_start": {"type": "boolean"},
             "first_segment_mode": {"enum": [None, "uniform", "model"]}})
DATA = _obj({
    "generator": {"enum": ["bigram", "hier", "jsonl", "idx"]},
    "V": _POS, "m": _POS, "alpha": _NUM, "n": _POS,
    "categories": _POS, "classes_per_cat": {"anyOf": [_POS, {"type": "array", "items": _POS}]}, "d_in": _POS,
    "separation": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}, "sigma2": _NUM,
    "offset_rank": {"anyOf": [_POS, {"type": "null"}]},
    "path": {"type": "string"}, "images": {"type": "string"}, "labels_path": {"type": "string"}, "K": _POS,
    "labels": {"enum": ["original", "permuted", "random"]},
    "classes": {"type": "array", "items": _INT},
}, ("generator",))
MODEL = _obj({"kind": {"enum": ["softmax-regression", "mlp", "bigram-lm"]}, "hidden": _POS, "embed_dim": _POS,
              "init": {"type": "string"}, "checkpoint": {"type": "string"}})
METHOD = _obj({"kind": {"enum": ["plain", "l2", "ewc", "imm", "multitask"]}, "c": {"type": "number", "minimum": 0},
               "fisher_samples": _POS, "merge": {"enum": ["mean", "mode"]}, "transfer": {"enum": ["weight", "l2"]},
               "alphas": {"anyOf": [{"type": "array", "items": _NUM}, {"type": "null"}]}}, ("kind",))
MEASURE = _obj({"n": {"type": "integer", "minimum": 0}, "k": _POS, "ns": _INTS, "shared_seeds": {"type": "boolean"},
                "pretrain": DATA, "pretrain_n": _POS, "reference": {"type": "string"}, "theta": {"type": "string"},
                "true_model": {"type": "boolean"}})
DISSECT = _obj({"classes_per_cat": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2}, "d_in": _POS,
                "separation": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}, "sigma2": _NUM,
                "offset_rank": {"anyOf": [_POS, {"type": "null"}]}, "n": _POS, "k": _POS, "hidden": _POS,
                "heads": {"enum": ["fresh", "shared"]}, "tolerance": _NUM})
CONTINUAL = _obj({"tasks": {"type": "integer", "minimum": 2}, "classes": {"type": "integer", "minimum": 2},
                  "d_in": _POS, "separation": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                  "sigma2": _NUM, "offset_rank": {"anyOf": [_POS, {"type": "null"}]}, "hidden": _POS,
                  "n_train": _POS, "n_stream": _POS, "n_eval": _POS, "k": {"anyOf": [_POS, {"type": "null"}]},
                  "future_budget": _POS, "head_strategy": {"enum": ["separate", "union", "reuse"]},
                  "methods": {"type": "array", "items": METHOD, "minItems": 1}})
ACCEPT = _obj({"criteria": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 14}},
               "quick": {"type": "boolean"}})
PLOT = _obj({"inputs": {"type": "array", "items": {"type": "string"}, "minItems": 1}, "title": {"type": "string"},
             "output": {"type": "string"}, "logx": {"type": "boolean"}}, ("inputs",))

SCHEMA = _obj({
    "kind": {"enum": list(KINDS)},
    "seed": _INT,
    "seeds": {"type": "array", "items": _INT, "minItems": 1},
    "out": {"type": "string"},
    "label": {"type": "string"},
    "data": DATA, "model": MODEL, "train": TRAIN, "preq": PREQ, "measure": MEASURE, "method": METHOD,
    "dissect": DISSECT, "continual": CONTINUAL, "acceptance": ACCEPT, "plot": PLOT,
}, ("kind",))

NEEDS = {"gen-data": ("data",), "preq": ("data",), "lit": ("data", "measure"), "lia": ("data", "measure"),
         "sweep": ("data", "measure"), "plot": ("plot",)}


def _path(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate(cfg: Any) -> dict:
    """Validate a parsed config; raises ConfigError naming the offending key."""
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            if e.validator == "additionalProperties":
                extra = sorted(set(e.instance) - set(e.schema.get("properties", {})))
                msgs.append(f"{_path(e)}: unknown key(s) {', '.join(map(repr, extra))}")
            else:
                msgs.append(f"{_path(e)}: {e.message}")
        raise ConfigError("; ".join(msgs))
    for section in NEEDS.get(cfg["kind"], ()):
        if section not in cfg:
            raise ConfigError(f"kind {cfg['kind']!r} requires a {section!r} section")
    # semantic checks that the schema cannot express
    try:
        train_config(cfg)
        preq_config(cfg)
        for m in method_specs(cfg):
            pass
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return cfg


def load(path) -> dict:
    try:
        raw = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return validate(cfg)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def seeds(cfg: dict, override: Optional[int] = None) -> list[int]:
    if override is not None:
        return [int(override)]
    if "seeds" in cfg:
        return [int(s) for s in cfg["seeds"]]
    return [int(cfg.get("seed", 0))]


def train_config(cfg: dict, seed: int = 0) -> TrainConfig:
    return TrainConfig(**cfg.get("train", {}), seed=seed)


def preq_config(cfg: dict, seed: int = 0) -> PreqConfig:
    return PreqConfig(**cfg.get("preq", {}), train=train_config(cfg, seed))


def method_specs(cfg: dict) -> list[MethodSpec]:
    raw = cfg.get("continual", {}).get("methods") or ([cfg["method"]] if "method" in cfg else [])
    out = []
    for m in raw:
        m = dict(m)
        if m.get("alphas") is not None:
            m["alphas"] = tuple(m["alphas"])
        out.append(MethodSpec(**m))
    return out
