"""Strict YAML run configuration shared by every command."""

from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .ctgeom import FanBeamGeometry
from .pipeline.config import ModelConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelBlock:
    variant: str = "MIST"
    scale: str = "desk"
    swin_preset: str = "desk"
    sparse_stride: int = 6
    sparse_count: int = 30
    label_stride: int = 2
    residual_input: str = "z1-z2"
    zero_heads: bool = True
    seed: int = 0


@dataclass(frozen=True)
class TrainBlock:
    lr: float = 2.5e-4
    epochs: int = 25
    gamma: float = 0.1
    seed: int = 0
    precision: str = "single"


@dataclass(frozen=True)
class DataBlock:
    n_train: int = 8
    n_test: int = 8
    seed: int = 0
    noise_mean: float = 0.0
    noise_variance: float = 0.01
    noise_seed: int = 0


@dataclass(frozen=True)
class DisplayBlock:
    center: float = 0.5
    width: float = 1.0


@dataclass(frozen=True)
class OutputBlock:
    dir: str = "run"


@dataclass(frozen=True)
class RunConfig:
    geometry: FanBeamGeometry = field(default_factory=FanBeamGeometry)
    model: ModelBlock = field(default_factory=ModelBlock)
    train: TrainBlock = field(default_factory=TrainBlock)
    data: DataBlock = field(default_factory=DataBlock)
    display: DisplayBlock = field(default_factory=DisplayBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    base_dir: Path = field(default=Path("."), compare=False)

    @property
    def out_dir(self) -> Path:
        p = Path(self.output.dir)
        return p if p.is_absolute() else self.base_dir / p

    def model_config(self, variant: str | None = None) -> ModelConfig:
        m = self.model
        return ModelConfig(variant=variant or m.variant, scale=m.scale, swin_preset=m.swin_preset,
                           sparse_stride=m.sparse_stride, sparse_count=m.sparse_count,
                           label_stride=m.label_stride, residual_input=m.residual_input,
                           zero_heads=m.zero_heads, geometry=self.geometry)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(lr=t.lr, epochs=t.epochs, gamma=t.gamma, seed=t.seed, precision=t.precision)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(
            self, model=dataclasses.replace(self.model, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            data=dataclasses.replace(self.data, seed=seed, noise_seed=seed))

    def to_dict(self) -> dict:
        return {name: _block_dict(getattr(self, name)) for name in _BLOCKS}


_BLOCKS = {"geometry": FanBeamGeometry, "model": ModelBlock, "train": TrainBlock, "data": DataBlock,
           "display": DisplayBlock, "output": OutputBlock}


def _block_dict(block) -> dict:
    return {f.name: getattr(block, f.name) for f in dataclasses.fields(block)}


def _coerce(name: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name}: expected a string, got {value!r}")
    return value


def parse_config(raw: dict | None, base_dir: Path = Path(".")) -> RunConfig:
    """Validate a mapping against the schema; unknown keys are errors."""
    raw = copy.deepcopy(raw or {})
    if not isinstance(raw, dict):
        raise ConfigError("top level of the config must be a mapping")
    unknown = sorted(set(raw) - set(_BLOCKS))
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    blocks = {}
    for name, cls in _BLOCKS.items():
        values = raw.get(name) or {}
        if not isinstance(values, dict):
            raise ConfigError(f"{name}: expected a mapping")
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        bad = sorted(set(values) - set(defaults))
        if bad:
            raise ConfigError(f"{name}: unknown keys {bad}")
        kwargs = {k: _coerce(f"{name}.{k}", v, defaults[k]) for k, v in values.items()}
        try:
            blocks[name] = cls(**kwargs)
        except ValueError as err:
            raise ConfigError(f"{name}: {err}") from None
    cfg = RunConfig(**blocks, base_dir=base_dir)
    try:
        cfg.model_config()
        cfg.train_config()
    except ValueError as err:
        raise ConfigError(str(err)) from None
    d = cfg.data
    if d.n_train < 0 or d.n_test < 0 or d.noise_variance < 0:
        raise ConfigError("data: counts and noise_variance must be non-negative")
    if not (math.isfinite(cfg.display.width) and cfg.display.width > 0):
        raise ConfigError("display.width must be positive")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from None
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML ({err})") from None
    return parse_config(raw, path.resolve().parent)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
