"""Experiment configuration: YAML file + environment overrides + validation.

One file fully determines an experiment.  Any key can be overridden with an
environment variable named CLPD_<SECTION>__<KEY> (double underscore per
nesting level), whose value is parsed as YAML.  Validation runs before any
compute and reports the dotted path of the offending field.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import yaml

from clpd.errors import ConfigError

ENV_PREFIX = "CLPD_"

DEFAULTS: dict = {
    "dataset": {
        "n": 2500,
        "step_range": [1, 6],
        "value_range": [0, 9],
        "value_limit": 30,
        "seed": 11,
        "split_fractions": [0.8, 0.1, 0.1],
        "split_seed": 12,
    },
    "model": {
        "arch": "gated-recurrent",
        "embed_dim": 24,
        "hidden_dim": 64,
        "num_layers": 2,
        "context_len": 160,
    },
    "train": {
        "epochs": 8,
        "batch_size": 32,
        "optimizer": "adam-style",
        "lr": 3e-3,
        "clip": 1.0,
        "loss": "seqkd",
        "estimator": "cot_steps",
        "dynamic_rerank": False,
        "rank_seed": 50,
        "warm_start_steps": 0,
    },
    "teachers": {
        "tau": 0.6,
        "corpus_seed": 77,
        "eval_seed": 78,
        "max_decode_len": 128,
        "roster": [],
    },
    "experiment": {
        "variants": ["vanilla", "cl_only", "pd_only", "clpd", "clpd_rt", "clpd_rd"],
        "seeds": [1, 2, 3],
        "fractions": None,
        "sweep_weak_fractions": [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
        "fixed_teacher_id": None,
        "out_dir": "runs/default",
        "jobs": 0,
    },
    "table1": {
        "fraction": 0.2,
        "warm_start_steps": 300,
        "epochs": 3,
        "seeds": None,
    },
}


def _merge(base: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"{where}: unknown configuration key")
        if isinstance(base[key], dict) and key != "roster":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_env(config: dict, env) -> dict:
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = [p.lower() for p in name[len(ENV_PREFIX) :].split("__")]
        if len(parts) < 2:
            continue
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        node = config
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"{name}: no such config section {'.'.join(parts[:-1])}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"{name}: unknown configuration key {'.'.join(parts)}")
        node[parts[-1]] = value
    return config


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def validate(config: dict, base_dir: Path | None = None) -> None:
    d = config["dataset"]
    _require(_is_int(d["n"]) and d["n"] >= 3, "dataset.n", "must be an integer >= 3")
    sr = d["step_range"]
    _require(
        isinstance(sr, list) and len(sr) == 2 and all(_is_int(x) for x in sr)
        and 1 <= sr[0] <= sr[1],
        "dataset.step_range", "must be [min, max] with 1 <= min <= max",
    )
    vr = d["value_range"]
    _require(
        isinstance(vr, list) and len(vr) == 2 and all(_is_int(x) for x in vr)
        and vr[0] <= vr[1],
        "dataset.value_range", "must be [lo, hi] with lo <= hi",
    )
    _require(
        _is_int(d["value_limit"]) and 1 <= d["value_limit"] <= 999,
        "dataset.value_limit", "must be an integer in [1, 999]",
    )
    sf = d["split_fractions"]
    _require(
        isinstance(sf, list) and len(sf) == 3 and all(_is_num(f) and f > 0 for f in sf)
        and abs(sum(sf) - 1.0) <= 1e-9,
        "dataset.split_fractions", "must be three positive numbers summing to 1",
    )

    m = config["model"]
    _require(
        m["arch"] in ("gated-recurrent", "small-attention"),
        "model.arch", "must be gated-recurrent or small-attention",
    )
    for key in ("embed_dim", "hidden_dim", "num_layers", "context_len"):
        _require(_is_int(m[key]) and m[key] >= 1, f"model.{key}", "must be an integer >= 1")

    t = config["train"]
    _require(_is_int(t["epochs"]) and t["epochs"] >= 0, "train.epochs", "must be >= 0")
    _require(_is_int(t["batch_size"]) and t["batch_size"] >= 1, "train.batch_size", "must be >= 1")
    _require(t["optimizer"] in ("sgd-momentum", "adam-style"), "train.optimizer",
             "must be sgd-momentum or adam-style")
    _require(_is_num(t["lr"]) and t["lr"] >= 0, "train.lr", "must be a number >= 0")
    _require(_is_num(t["clip"]) and t["clip"] >= 0, "train.clip", "must be a number >= 0")
    _require(t["loss"] in ("seqkd", "skd_kld"), "train.loss", "must be seqkd or skd_kld")
    _require(t["estimator"] in ("cot_steps", "student_loss"), "train.estimator",
             "must be cot_steps or student_loss")
    _require(isinstance(t["dynamic_rerank"], bool), "train.dynamic_rerank", "must be a boolean")
    _require(_is_int(t["warm_start_steps"]) and t["warm_start_steps"] >= 0,
             "train.warm_start_steps", "must be an integer >= 0")

    teach = config["teachers"]
    _require(_is_num(teach["tau"]) and 0 <= teach["tau"] <= 1, "teachers.tau",
             "must be a number in [0, 1]")
    roster = teach["roster"]
    _require(isinstance(roster, list) and roster, "teachers.roster",
             "must be a non-empty list of teachers")
    seen_ids = set()
    for i, entry in enumerate(roster):
        where = f"teachers.roster[{i}]"
        _require(isinstance(entry, dict), where, "must be a mapping")
        _require(isinstance(entry.get("id"), str) and entry["id"], f"{where}.id",
                 "must be a non-empty string")
        _require(entry["id"] not in seen_ids, f"{where}.id", "duplicate teacher id")
        seen_ids.add(entry["id"])
        kind = entry.get("kind")
        _require(kind in ("oracle", "checkpoint"), f"{where}.kind",
                 "must be oracle or checkpoint")
        if kind == "oracle":
            acc = entry.get("accuracy_by_steps")
            _require(isinstance(acc, dict) and acc, f"{where}.accuracy_by_steps",
                     "must be a non-empty mapping of step count to accuracy")
            for k, v in acc.items():
                _require(_is_num(v) and 0 <= v <= 1, f"{where}.accuracy_by_steps.{k}",
                         "must be a probability")
            _require(_is_int(entry.get("verbosity", 0)) and entry.get("verbosity", 0) >= 0,
                     f"{where}.verbosity", "must be an integer >= 0")
            noise = entry.get("style_noise", 0.0)
            _require(_is_num(noise) and 0 <= noise <= 1, f"{where}.style_noise",
                     "must be in [0, 1]")
        else:
            path = entry.get("path")
            _require(isinstance(path, str) and path, f"{where}.path",
                     "must be a checkpoint file path")
            resolved = Path(path)
            if base_dir is not None and not resolved.is_absolute():
                resolved = base_dir / resolved
            _require(resolved.exists(), f"{where}.path", f"file not found: {resolved}")

    e = config["experiment"]
    _require(
        isinstance(e["variants"], list) and e["variants"]
        and all(v in ("vanilla", "cl_only", "pd_only", "clpd", "clpd_rt", "clpd_rd")
                for v in e["variants"]),
        "experiment.variants", "must be a non-empty list of known variants",
    )
    _require(
        isinstance(e["seeds"], list) and e["seeds"] and all(_is_int(s) for s in e["seeds"]),
        "experiment.seeds", "must be a non-empty list of integers",
    )
    if e["fractions"] is not None:
        fr = e["fractions"]
        _require(
            isinstance(fr, list) and all(_is_num(f) and f > 0 for f in fr)
            and abs(sum(fr) - 1.0) <= 1e-9,
            "experiment.fractions", "must be positive numbers summing to 1",
        )
    _require(
        isinstance(e["sweep_weak_fractions"], list)
        and all(_is_num(f) and 0 < f < 1 for f in e["sweep_weak_fractions"]),
        "experiment.sweep_weak_fractions", "must be numbers in (0, 1)",
    )
    if e["fixed_teacher_id"] is not None:
        _require(e["fixed_teacher_id"] in seen_ids, "experiment.fixed_teacher_id",
                 "must name a roster teacher")
    _require(_is_int(e["jobs"]) and e["jobs"] >= 0, "experiment.jobs",
             "must be an integer >= 0 (0 = all cores)")

    tb = config["table1"]
    _require(_is_num(tb["fraction"]) and 0 < tb["fraction"] <= 1, "table1.fraction",
             "must be in (0, 1]")
    _require(_is_int(tb["warm_start_steps"]) and tb["warm_start_steps"] >= 0,
             "table1.warm_start_steps", "must be an integer >= 0")
    _require(_is_int(tb["epochs"]) and tb["epochs"] >= 1, "table1.epochs",
             "must be an integer >= 1")
    if tb["seeds"] is not None:
        _require(
            isinstance(tb["seeds"], list) and tb["seeds"]
            and all(_is_int(s) for s in tb["seeds"]),
            "table1.seeds", "must be a non-empty list of integers",
        )


def load_config(path, env=None) -> dict:
    """Load, override, validate; returns the fully resolved config dict."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if loaded is None:
        loaded = {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    config = _merge(DEFAULTS, loaded, "")
    config = _apply_env(config, env if env is not None else os.environ)
    validate(config, base_dir=path.parent)
    return config


def config_hash(config: dict) -> str:
    """Hash of the fully resolved config; changing any field changes it."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
