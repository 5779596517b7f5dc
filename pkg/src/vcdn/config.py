"""Hierarchical run configuration with strict key checking.

Precedence: dataclass defaults < config file < VCDN_SEED < command-line
overrides (dotted paths, e.g. ``sim.n_bodies=7``). Unknown keys and failed
invariants raise with the offending key path.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .perception import PerceptionTrainConfig
from .sim import SimConfig
from .training import JointTrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    n_episodes: int = 1000
    splits: dict = field(default_factory=lambda: {"train": 0.9, "test": 0.1})
    workers: int = 1

    def __post_init__(self):
        if self.n_episodes < 0:
            raise ValueError("n_episodes must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class EvalConfig:
    t_obs_list: tuple[int, ...] = (5, 10, 20, 50)
    rollout_t_obs: int = 50
    rollout_horizon: int = 30
    param_t_obs: int = 50
    cf_delta: float = 30.0
    cf_horizon: int = 30
    cf_t_obs: int = 50
    cf_episodes: int = 50
    max_train_fit_episodes: int = 500
    scatter_cap: int = 500

    def __post_init__(self):
        if not self.t_obs_list:
            raise ValueError("t_obs_list must not be empty")
        if self.rollout_horizon < 1 or self.cf_horizon < 1:
            raise ValueError("horizons must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_root: str = "runs"
    sim: SimConfig = field(default_factory=SimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    perception: PerceptionTrainConfig = field(default_factory=PerceptionTrainConfig)
    train: JointTrainConfig = field(default_factory=JointTrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTIONS = {
    "sim": SimConfig,
    "data": DataConfig,
    "perception": PerceptionTrainConfig,
    "train": JointTrainConfig,
    "eval": EvalConfig,
}
_SCALARS = {"seed": int, "out_root": str}


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _coerce(value, target_type, path: str):
    if target_type is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if target_type is bool and not isinstance(value, bool):
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    if target_type is str and not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    if target_type in (tuple, list) and isinstance(value, (tuple, list)):
        return tuple(value)
    if target_type is dict and not isinstance(value, dict):
        raise ConfigError(f"{path}: expected an object, got {value!r}")
    return value


def _merge_section(cls, base: dict, updates: dict, prefix: str) -> dict:
    fields = {f.name: f for f in dataclasses.fields(cls)}
    merged = dict(base)
    for key, value in updates.items():
        if key not in fields:
            raise ConfigError(f"unknown key {prefix}{key}")
        default = merged[key]
        target = type(default) if default is not None else object
        merged[key] = _coerce(value, target, f"{prefix}{key}")
    return merged


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional JSON file, and overrides."""
    tree: dict = {name: dataclasses.asdict(cls()) for name, cls in _SECTIONS.items()}
    tree.update({k: getattr(RunConfig(), k) for k in _SCALARS})

    file_tree = {}
    if path is not None:
        with open(path) as f:
            file_tree = json.load(f)
        if not isinstance(file_tree, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")

    for key, value in file_tree.items():
        if key in _SCALARS:
            tree[key] = _coerce(value, _SCALARS[key], key)
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected an object")
            tree[key] = _merge_section(_SECTIONS[key], tree[key], value, f"{key}.")
        else:
            raise ConfigError(f"unknown key {key}")

    env_seed = os.environ.get("VCDN_SEED")
    if env_seed is not None:
        try:
            tree["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"VCDN_SEED: expected an integer, got {env_seed!r}")

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        value = _parse_value(raw)
        parts = dotted.split(".")
        if len(parts) == 1 and parts[0] in _SCALARS:
            tree[parts[0]] = _coerce(value, _SCALARS[parts[0]], parts[0])
        elif len(parts) == 2 and parts[0] in _SECTIONS:
            tree[parts[0]] = _merge_section(
                _SECTIONS[parts[0]], tree[parts[0]], {parts[1]: value}, f"{parts[0]}."
            )
        else:
            raise ConfigError(f"unknown key {dotted}")

    sections = {}
    for name, cls in _SECTIONS.items():
        data = dict(tree[name])
        if name == "train" and "prior" in data:
            data["prior"] = tuple(data["prior"])
        if name == "eval" and "t_obs_list" in data:
            data["t_obs_list"] = tuple(data["t_obs_list"])
        try:
            sections[name] = cls(**data)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    return RunConfig(seed=tree["seed"], out_root=tree["out_root"], **sections)


def config_snapshot(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
