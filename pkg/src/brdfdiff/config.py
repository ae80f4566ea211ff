"""Pipeline configuration: nested dataclasses loaded from YAML or JSON.

Unknown keys and bad values raise :class:`ConfigError` naming the dotted path
of the offending field.  ``BRDFDIFF_ROOT`` (if set) is the base for relative
paths; otherwise they resolve against the config file's directory.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .diffusion.denoiser import DenoiserConfig
from .diffusion.training import TrainConfig
from .errors import ConfigError
from .field import FitConfig
from .metrics import DISTANCES
from .render import RenderConfig

ROOT_ENV = "BRDFDIFF_ROOT"
CONDITION_SOURCES = ("none", "type", "text", "image")


@dataclass
class PathsConfig:
    dataset_dir: Optional[str] = None
    output_dir: str = "out"
    augmerl_dir: Optional[str] = None
    neumerl: Optional[str] = None
    checkpoint: Optional[str] = None
    embeddings_dir: Optional[str] = None


@dataclass
class AugmentConfig:
    pair_count: int = 1800
    k: int = 300


@dataclass
class DiffusionConfig:
    T: int = 100
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class SampleConfig:
    n: int = 4
    omega: float = 0.0
    type_id: Optional[int] = None
    category: Optional[str] = None
    max_attempts: int = 100


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    metrics: list = field(default_factory=lambda: ["BRDF-L1", "RMSE", "NegPSNR", "NegSSIM"])
    condition: str = "none"
    superres_factors: list = field(default_factory=lambda: [1, 16])

    def validate(self):
        for m in self.metrics:
            if m not in DISTANCES:
                raise ConfigError(f"metrics: unknown distance {m!r}")
        if self.condition not in CONDITION_SOURCES:
            raise ConfigError(f"condition: must be one of {CONDITION_SOURCES}")
        if self.sample.omega < -1:
            raise ConfigError("sample.omega: guidance must be >= -1")
        if self.sample.n < 1:
            raise ConfigError("sample.n: must be >= 1")
        from .rules import CATEGORIES
        if self.sample.category is not None and self.sample.category not in CATEGORIES:
            raise ConfigError(f"sample.category: must be one of {CATEGORIES}")
        for x in self.superres_factors:
            if not isinstance(x, int) or x < 1:
                raise ConfigError("superres_factors: entries must be positive integers")
        return self

    def to_dict(self) -> dict:
        return _to_dict(self)


def _to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def _build(cls, data, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"{where}: unknown field")
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, where)
        else:
            kwargs[key] = _coerce(value, default, where)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def _coerce(value, default, where):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return type(default)(value)
    return value


def parse_override(text: str):
    """``"fit.epochs=5"`` -> ``(["fit", "epochs"], 5)``; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    return key.strip().split("."), yaml.safe_load(raw)


def apply_overrides(data: dict, overrides) -> dict:
    data = json.loads(json.dumps(data))
    for text in overrides or ():
        keys, value = parse_override(text)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{'.'.join(keys)}: cannot override inside a scalar")
        node[keys[-1]] = value
    return data


def config_from_dict(data: dict, base_dir: Optional[Path] = None) -> PipelineConfig:
    cfg = _build(PipelineConfig, data, "").validate()
    root = os.environ.get(ROOT_ENV)
    base = Path(root) if root else (base_dir or Path.cwd())
    for f in fields(PathsConfig):
        v = getattr(cfg.paths, f.name)
        if v is not None and not Path(v).is_absolute():
            setattr(cfg.paths, f.name, str(base / v))
    return cfg


def load_config(path=None, overrides=None) -> PipelineConfig:
    data, base = {}, None
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        text = path.read_text()
        try:
            data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (ValueError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        data = data or {}
        base = path.parent
    return config_from_dict(apply_overrides(data, overrides), base)


def require_path(cfg: PipelineConfig, name: str, kind: str = "any") -> Path:
    v = getattr(cfg.paths, name)
    if v is None:
        raise ConfigError(f"paths.{name}: required for this command")
    p = Path(v)
    if not p.exists():
        raise ConfigError(f"paths.{name}: {p} does not exist")
    if kind == "dir" and not p.is_dir():
        raise ConfigError(f"paths.{name}: {p} is not a directory")
    return p
