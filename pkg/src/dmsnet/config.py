"""Run configuration: one JSON document, overridable key by key.

A run's exact configuration is archived beside its outputs, so every
field must survive a dict/JSON round trip. CLI flags override single
keys dot-path style, e.g. ``--set model.embedding_dim=64``.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import AblationSpec, ModelConfig


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 16
    epochs: int = 50
    cosine_schedule: bool = True
    max_steps: int | None = None  # optional hard cap for desk-scale runs


@dataclass(frozen=True)
class AugmentConfig:
    multiplier: float = 2.0
    per_class: dict = field(default_factory=dict)
    partitions: tuple = ("train",)


@dataclass(frozen=True)
class RunConfig:
    data_csv: str = "data/odir.csv"
    image_dir: str | None = None
    data_dir: str = "prepared"
    output_dir: str = "runs/default"
    checkpoint: str | None = None
    seed: int = 42
    device: str = "cpu"
    split_ratios: tuple = (0.8, 0.1, 0.1)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)


def config_to_dict(cfg):
    return dataclasses.asdict(cfg)


def _build(cls, data, path):
    field_types = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in field_types:
            raise ConfigError(f"unknown config field '{path}{key}'")
        kwargs[key] = value
    nested = {"model": ModelConfig, "train": TrainConfig, "augment": AugmentConfig,
              "ablation": AblationSpec}
    for key, sub_cls in nested.items():
        if key in kwargs and isinstance(kwargs[key], dict):
            kwargs[key] = _build(sub_cls, kwargs[key], f"{path}{key}.")
    for key in ("split_ratios", "partitions"):
        if key in kwargs and isinstance(kwargs[key], list):
            kwargs[key] = tuple(kwargs[key])
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid config near '{path or 'root'}': {exc}") from exc


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be an object, got {type(data).__name__}")
    return _build(RunConfig, data, "")


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config_to_dict(cfg), sort_keys=True, indent=2) + "\n")


def apply_overrides(data, overrides):
    """Apply ``dotted.key=value`` strings to a config dict in place.

    Values parse as JSON literals with a plain-string fallback, so
    ``--set model.heads=2`` and ``--set device=cpu`` both work.
    """
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        keys = dotted.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot descend into non-object at '{key}' in '{dotted}'")
        node[keys[-1]] = value
    return data
