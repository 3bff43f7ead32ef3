"""Experiment configuration: strict YAML with unknown-key rejection.

Four blocks: task, model, train, eval.  Unknown keys anywhere are errors
(a silently ignored typo would invalidate a whole sweep), and every value
is range-checked before any work starts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import yaml

from .errors import ConfigError
from .erm import PAIR_STRATEGIES, TrainConfig
from .synthetic import MODEL_FAMILIES, SyntheticTask, make_task

_TASK_KEYS = {"family", "p", "m", "seed", "r", "A", "k", "beta", "rho",
              "p1_left", "p1_right"}
_MODEL_KEYS = {"m", "depth", "width", "epsilon", "a", "clamp", "init_scale",
               "a_schedule", "a_anneal"}
_TRAIN_KEYS = {"n", "epochs", "pair_batch", "lr_init", "lr_decay", "pair_strategy",
               "pairs_per_epoch", "seed"}
_EVAL_KEYS = {"mc_pairs", "seed", "t_grid", "n_list", "seeds", "noise_mc_pairs"}
_BLOCKS = {"task": _TASK_KEYS, "model": _MODEL_KEYS, "train": _TRAIN_KEYS, "eval": _EVAL_KEYS}


@dataclass
class ExperimentConfig:
    task: dict
    model: dict
    train: dict
    eval: dict
    source_path: str = ""
    sha256: str = ""

    def build_task(self, seed_override: int | None = None) -> SyntheticTask:
        params = {k: v for k, v in self.task.items()
                  if k not in ("family", "p", "m", "seed")}
        seed = self.task.get("seed", 0) if seed_override is None else seed_override
        task = make_task(self.task["family"], p=self.task.get("p", 1), seed=seed, **params)
        declared_m = self.task.get("m")
        if declared_m is not None and int(declared_m) != task.model.m:
            raise ConfigError(
                f"{self.source_path}: [task] m={declared_m} but family "
                f"{self.task['family']!r} has {task.model.m} labels"
            )
        return task

    def build_train_config(self, epochs_override: int | None = None) -> TrainConfig:
        t = self.train
        return TrainConfig(
            epochs=epochs_override if epochs_override is not None else t.get("epochs", 100),
            pair_batch=t.get("pair_batch", 512),
            lr_init=t.get("lr_init", 0.5),
            lr_decay=t.get("lr_decay", 1.0),
            a_schedule=self.a_schedule(t.get("epochs", 100)),
            seed=t.get("seed", 0),
            pair_strategy=t.get("pair_strategy", "all-pairs"),
            pairs_per_epoch=t.get("pairs_per_epoch"),
        )

    def a_schedule(self, epochs: int) -> list | None:
        if "a_schedule" in self.model:
            return [float(v) for v in self.model["a_schedule"]]
        if "a_anneal" in self.model:
            spec = self.model["a_anneal"]
            start, decay = float(spec["start"]), float(spec["decay"])
            target = float(self.model.get("a", 0.1))
            return [max(target, start * decay**e) for e in range(epochs)]
        return None


def _reject_unknown(block_name: str, block: dict, allowed: set, where: str) -> None:
    for key in block:
        if key not in allowed:
            raise ConfigError(f"{where}: [{block_name}] unknown key {key!r} "
                              f"(allowed: {sorted(allowed)})")


def _require(cond: bool, where: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{where}: {message}")


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML experiment config."""
    where = str(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as err:
        raise ConfigError(f"{where}: {err}") from err
    _require(isinstance(doc, dict), where, "top level must be a mapping")
    for name in doc:
        _require(name in _BLOCKS, where, f"unknown block [{name}] "
                 f"(allowed: {sorted(_BLOCKS)})")
    blocks = {}
    for name, allowed in _BLOCKS.items():
        block = doc.get(name, {}) or {}
        _require(isinstance(block, dict), where, f"[{name}] must be a mapping")
        _reject_unknown(name, block, allowed, where)
        blocks[name] = block

    task = blocks["task"]
    _require("family" in task, where, "[task] needs a 'family' key")
    _require(task["family"] in MODEL_FAMILIES, where,
             f"[task] unknown family {task['family']!r} (known: {sorted(MODEL_FAMILIES)})")
    _require(int(task.get("p", 1)) >= 1, where, "[task] p must be >= 1")

    model = blocks["model"]
    if "epsilon" in model:
        _require(0.0 < float(model["epsilon"]) < 0.5, where,
                 "[model] epsilon must lie in (0, 1/2)")
    if "a" in model:
        _require(float(model["a"]) > 0.0, where, "[model] a must be positive")
    for key in ("m", "depth", "width"):
        if key in model:
            _require(int(model[key]) >= 1, where, f"[model] {key} must be >= 1")
    if "a_anneal" in model:
        spec = model["a_anneal"]
        _require(isinstance(spec, dict) and {"start", "decay"} <= set(spec), where,
                 "[model] a_anneal needs 'start' and 'decay'")
        _require(set(spec) <= {"start", "decay"}, where,
                 "[model] a_anneal allows only 'start' and 'decay'")
        _require(float(spec["start"]) > 0 and 0 < float(spec["decay"]) <= 1, where,
                 "[model] a_anneal must have positive start and decay in (0, 1]")

    train = blocks["train"]
    if "n" in train:
        _require(int(train["n"]) >= 2, where, "[train] n must be >= 2 (pair risk needs pairs)")
    for key in ("epochs", "pair_batch", "pairs_per_epoch"):
        if key in train and train[key] is not None:
            _require(int(train[key]) >= 1, where, f"[train] {key} must be >= 1")
    if "lr_init" in train:
        _require(float(train["lr_init"]) >= 0.0, where, "[train] lr_init must be >= 0")
    if "lr_decay" in train:
        _require(float(train["lr_decay"]) > 0.0, where, "[train] lr_decay must be positive")
    if "pair_strategy" in train:
        _require(train["pair_strategy"] in PAIR_STRATEGIES, where,
                 f"[train] pair_strategy must be one of {PAIR_STRATEGIES}")

    ev = blocks["eval"]
    if "mc_pairs" in ev:
        _require(int(ev["mc_pairs"]) >= 100, where, "[eval] mc_pairs must be >= 100")
    if "n_list" in ev:
        nl = ev["n_list"]
        _require(isinstance(nl, list) and len(set(nl)) >= 4, where,
                 "[eval] n_list needs at least 4 distinct sample sizes")
        _require(all(int(n) >= 8 for n in nl), where, "[eval] n_list entries must be >= 8")
    if "seeds" in ev:
        _require(isinstance(ev["seeds"], list) and len(ev["seeds"]) >= 3, where,
                 "[eval] needs at least 3 seeds")
    if "t_grid" in ev:
        tg = np.asarray(ev["t_grid"], dtype=np.float64)
        _require(tg.size >= 4 and np.all(tg > 0) and np.all(tg < 0.5), where,
                 "[eval] t_grid needs >= 4 values in (0, 1/2)")

    return ExperimentConfig(
        task=task, model=model, train=train, eval=ev,
        source_path=where, sha256=hashlib.sha256(raw).hexdigest(),
    )
