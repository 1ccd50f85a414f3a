"""Flat dotted-key run configuration with presets and precedence.

Resolution order, lowest to highest: defaults, preset, config file, flags.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import MISSING, fields
from pathlib import Path
from typing import Any, Mapping

from .bench import BenchConfig, default_workers
from .model import ModelConfig, param_matched_hidden
from .tasks import TaskSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _section(prefix: str, cls, skip=()) -> dict[str, Any]:
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        val = f.default if f.default_factory is MISSING else f.default_factory()
        out[f"{prefix}.{f.name}"] = list(val) if isinstance(val, tuple) else val
    return out


DEFAULTS: dict[str, Any] = {
    "task": "parity-check",
    "out": "runs/default",
    "seeds": 1,
    "preset": "",
    "checkpoint": "",
    **_section("model", ModelConfig, skip=("d_x", "K_out")),
    **_section("train", TrainConfig),
    **_section("bench", BenchConfig),
    "gen.length": 10,
    "gen.count": 100,
}

PRESETS: dict[str, dict[str, Any]] = {
    "desk": {"model.d_h": 64, "train.steps": 3000, "train.batch_size": 128,
             "train.eval_max_len": 200, "seeds": 3},
    "paper": {"model.d_h": 256, "train.steps": 40000, "train.batch_size": 128,
              "train.eval_max_len": 500, "seeds": 10},
}


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    if isinstance(value, str) and not isinstance(default, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, list):
        ok = isinstance(value, list) and all(isinstance(v, int) for v in value)
    else:
        ok = isinstance(value, str)
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return value


def _apply(cfg: dict, values: Mapping[str, Any], origin: str) -> None:
    for key, value in values.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r} in {origin}")
        cfg[key] = _coerce(key, value)


def load_file(path) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a flat JSON object")
    return data


def resolve(file_values: Mapping[str, Any] | None = None,
            flags: Mapping[str, Any] | None = None) -> dict[str, Any]:
    file_values = dict(file_values or {})
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    preset = flags.get("preset", file_values.get("preset", ""))
    if preset and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = dict(DEFAULTS)
    cfg["bench.workers"] = default_workers()  # environment read per run, not at import
    _apply(cfg, PRESETS.get(preset, {}), f"preset {preset}")
    _apply(cfg, file_values, "config file")
    _apply(cfg, flags, "flags")
    cfg["preset"] = preset
    return cfg


def config_hash(cfg: Mapping[str, Any]) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_resolved(cfg: Mapping[str, Any], out_dir) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    (out / "config.json").write_text(json.dumps({**cfg, "config_hash": h}, indent=2, sort_keys=True) + "\n")
    return h


def model_config(cfg: Mapping[str, Any], task: TaskSpec, **override) -> ModelConfig:
    values = {"d_h": cfg["model.d_h"], "R": cfg["model.R"], "variant": cfg["model.variant"], **override}
    try:
        return ModelConfig(d_x=len(task.input_vocab), K_out=task.n_classes, **values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def train_config(cfg: Mapping[str, Any], **override) -> TrainConfig:
    values = {f.name: cfg[f"train.{f.name}"] for f in fields(TrainConfig)}
    values.update(override)
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def bench_config(cfg: Mapping[str, Any]) -> BenchConfig:
    values = {f.name: cfg[f"bench.{f.name}"] for f in fields(BenchConfig)}
    try:
        return BenchConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def ablation_grid(cfg: Mapping[str, Any]) -> list[tuple[str, dict[str, Any]]]:
    """Baseline plus the six ablations: parameter-matched size, R in {0, 2}, PR-RNN with R in {0, 1, 2}."""
    d = cfg["model.d_h"]
    return [
        ("pr-lstm", {"variant": "pr-lstm", "R": 1, "d_h": d}),
        ("pr-lstm-param-matched", {"variant": "pr-lstm", "R": 1, "d_h": param_matched_hidden(d)}),
        ("pr-lstm-R0", {"variant": "pr-lstm", "R": 0, "d_h": d}),
        ("pr-lstm-R2", {"variant": "pr-lstm", "R": 2, "d_h": d}),
        ("pr-rnn-R0", {"variant": "pr-rnn", "R": 0, "d_h": d}),
        ("pr-rnn-R1", {"variant": "pr-rnn", "R": 1, "d_h": d}),
        ("pr-rnn-R2", {"variant": "pr-rnn", "R": 2, "d_h": d}),
    ]
