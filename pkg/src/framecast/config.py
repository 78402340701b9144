"""Flat ``key = value`` pipeline configuration.

One file configures every stage (scene generation, model, optimizer,
preprocessing).  Lines starting with ``#`` and text after an unquoted ``#``
are comments.  Values resolve in the order: command-line flag, then the
``FRAMECAST_SEED`` environment variable (seed only), then the file, then the
defaults below.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .preprocess import PreprocessConfig
from .scene import ACTION_DIM, STATE_DIM, WorldSpec
from .training import OptimConfig

SEED_ENV = "FRAMECAST_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    seed: int = 0
    # scene
    rows: int = 64
    cols: int = 64
    radius: float = 0.1
    dt: float = 0.1
    max_speed: float = 0.5
    max_steps: int = 200
    noise_sigma: float = 0.0
    observer: str = "stationary"
    ego_speed: float = 0.3
    kp_lo: float = 2.0
    kp_hi: float = 6.0
    ki_lo: float = 0.0
    ki_hi: float = 0.5
    kd_lo: float = 2.0
    kd_hi: float = 5.0
    episodes: int = 1000
    trials: int = 0  # 0: run as many trials as needed to fill `episodes`
    t_in: int = 5
    t_out: int = 5
    # model
    feature_dim: int = 128
    hidden_dim: int = 128
    conditioned: bool = False
    recon_reversed: bool = True
    init_scale: float = 0.08
    forget_bias: float = 1.0
    # optimizer
    algorithm: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    epochs: int = 50
    batch_size: int = 16
    freeze_dense: bool = True
    teacher_forcing: bool = False
    workers: int = 1
    pretrain_epochs: int = 30
    pretrain_lr: float = 1e-3
    pretrain_batch_size: int = 32
    # preprocessing
    gaussian_sigma: float = 1.0
    invert: bool = True
    scale_to_unit: bool = True

    def world(self) -> WorldSpec:
        return WorldSpec(
            rows=self.rows, cols=self.cols, radius=self.radius,
            kp=(self.kp_lo, self.kp_hi), ki=(self.ki_lo, self.ki_hi), kd=(self.kd_lo, self.kd_hi),
            dt=self.dt, max_speed=self.max_speed, max_steps=self.max_steps,
            noise_sigma=self.noise_sigma, observer=self.observer, ego_speed=self.ego_speed, seed=self.seed,
        )

    def model(self) -> ModelConfig:
        return ModelConfig(
            self.rows, self.cols, self.feature_dim, self.hidden_dim, self.t_in, self.t_out,
            ACTION_DIM, STATE_DIM, self.conditioned, self.recon_reversed,
        )

    def optim(self) -> OptimConfig:
        return OptimConfig(
            self.algorithm, self.learning_rate, self.momentum, self.beta1, self.beta2, self.adam_eps,
            self.clip_norm, self.epochs, self.batch_size, self.seed, self.freeze_dense,
            self.teacher_forcing, self.workers,
        )

    def pretrain_optim(self) -> OptimConfig:
        return dataclasses.replace(
            self.optim(), epochs=self.pretrain_epochs, learning_rate=self.pretrain_lr,
            batch_size=self.pretrain_batch_size,
        )

    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig(self.gaussian_sigma, self.invert, self.scale_to_unit)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {format_value(getattr(self, f.name))}\n" for f in fields(self))


FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_value(key: str, text: str):
    kind = FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key} ({kind}): {text!r}") from None
    return text


def parse_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = parse_value(key, value)
    return values


def resolve(path=None, overrides: dict | None = None, environ=None) -> PipelineConfig:
    """Merge defaults, a config file, the seed environment variable and explicit overrides."""
    environ = os.environ if environ is None else environ
    values = {}
    if path is not None:
        values.update(parse_text(Path(path).read_text()))
    if environ.get(SEED_ENV):
        values["seed"] = parse_value("seed", environ[SEED_ENV])
    for k, v in (overrides or {}).items():
        if k not in FIELD_TYPES:
            raise ConfigError(f"unknown key {k!r}")
        if v is not None:
            values[k] = parse_value(k, v) if isinstance(v, str) else v
    return PipelineConfig(**values)
