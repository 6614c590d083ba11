"""Toolkit configuration: one JSON file plus ``--set key=value`` overrides."""
from __future__ import annotations

import json
import types
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .model import TrainOptions, WaveNetConfig


class ConfigError(ValueError):
    pass


@dataclass
class PathOptions:
    corpus_dir: str = "corpus"
    feature_dir: str = "features"
    checkpoint_dir: str = "checkpoints"
    output_dir: str = "output"


@dataclass
class FeatureOptions:
    vt_order: int = 30
    source_order: int = 10
    frame_shift: int = 80
    sample_rate: int = 16000
    context: int = 4
    preemphasis: float = 0.97
    f_min: float = 60.0
    f_max: float = 400.0


@dataclass
class SplitOptions:
    valid_ratio: float = 0.05
    test_ratio: float = 0.05


@dataclass
class ToolkitConfig:
    paths: PathOptions = field(default_factory=PathOptions)
    features: FeatureOptions = field(default_factory=FeatureOptions)
    model: WaveNetConfig = field(default_factory=WaveNetConfig)
    training: TrainOptions = field(default_factory=TrainOptions)
    split: SplitOptions = field(default_factory=SplitOptions)
    seed: int = 0
    jobs: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"]["dilations"] = list(self.model.dilations)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, d: dict) -> "ToolkitConfig":
        return _build(cls, d, "")

    @classmethod
    def load(cls, path) -> "ToolkitConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        return cls.from_dict(d)

    def conditioning_dim(self, feature_dim: int) -> int:
        return feature_dim * (2 * self.features.context + 1)


def _build(cls, d, prefix):
    if not isinstance(d, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in sorted(unknown))}")
    kwargs = {}
    for k, v in d.items():
        t = hints[k]
        kwargs[k] = _build(t, v, f"{prefix}{k}.") if is_dataclass(t) else _check(t, v, prefix + k)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid {prefix.rstrip('.') or 'config'}: {err}") from err


def _check(t, v, key):
    union = typing.get_origin(t) in (typing.Union, types.UnionType)
    allowed = typing.get_args(t) if union else (t,)
    ok = False
    for a in allowed:
        if a is type(None):
            ok |= v is None
        elif a is float:
            ok |= isinstance(v, (int, float)) and not isinstance(v, bool)
        elif a is int:
            ok |= isinstance(v, int) and not isinstance(v, bool)
        elif a is tuple:
            ok |= isinstance(v, (list, tuple))
        elif isinstance(a, type):
            ok |= isinstance(v, a)
        else:
            ok = True
    if not ok:
        raise ConfigError(f"{key}: expected {t}, got {v!r}")
    return v


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: ToolkitConfig, items) -> ToolkitConfig:
    """Apply ``section.key=value`` strings; values are parsed as JSON when
    possible, otherwise taken as strings."""
    d = cfg.to_dict()
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config section in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = parse_value(raw.strip())
    return ToolkitConfig.from_dict(d)
