"""Validated run configuration for the command line."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .model import TrainConfig

FORMAT_VERSION = 1
SEED_ENV = "ETNET_SEED"


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainSection(_Strict):
    lam: float = Field(0.1, ge=0)
    learning_rate: float = Field(1e-3, gt=0)
    epochs: int = Field(200, ge=0)
    batch_size: int = Field(64, ge=1)
    n_branches: int = Field(3, ge=1)
    n_layers: int = Field(2, ge=1)
    hidden_dim: int = Field(18, ge=1)
    latent_dim: Optional[int] = Field(None, ge=1)
    gmm_k: int = Field(4, ge=1)
    em_iters_per_epoch: int = Field(5, ge=0)
    membership_hidden: int = Field(8, ge=1)


class DataSection(_Strict):
    train: Optional[str] = None
    test: Optional[str] = None
    truth: Optional[str] = None
    window_len: float = Field(120, gt=0)
    bin_len: float = Field(1.0, gt=0)


class SynthSection(_Strict):
    """Synthetic wave suite; ``task`` picks the anomaly or clustering protocol."""

    copies: int = Field(500, ge=0)
    length: int = Field(120, ge=4)
    period: float = Field(40.0, ge=2)
    awgn_sigma: float = Field(0.1, ge=0)
    random_phase: bool = True
    phase_jitter: Optional[float] = Field(None, ge=0)
    interval: float = Field(1.0, gt=0)
    test_normals: int = Field(100, ge=0)
    test_anomalies_per_type: int = Field(100, ge=0)
    anomaly_types: list[int] = Field(default_factory=lambda: [1, 2, 3, 4])
    contamination: float = Field(0.0, ge=0, lt=1)
    test_copies: int = Field(100, ge=0)

    @model_validator(mode="after")
    def _types(self):
        if any(t not in (1, 2, 3, 4) for t in self.anomaly_types):
            raise ValueError("anomaly_types must be drawn from 1..4")
        return self


class RunConfig(_Strict):
    format_version: int = FORMAT_VERSION
    seed: Optional[int] = None
    task: Literal["anomaly", "cluster"] = "anomaly"
    train: TrainSection = Field(default_factory=TrainSection)
    data: DataSection = Field(default_factory=DataSection)
    synth: SynthSection = Field(default_factory=SynthSection)
    metrics: list[Literal["auc", "nmi"]] = Field(default_factory=list)
    threshold_quantile: float = Field(0.95, gt=0, lt=1)
    attribution_points: int = Field(10, ge=2)
    out_dir: Optional[str] = None

    @model_validator(mode="after")
    def _version(self):
        if self.format_version != FORMAT_VERSION:
            raise ValueError(f"config format_version {self.format_version} is not supported (expected {FORMAT_VERSION})")
        return self

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.train.model_dump())


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve_seed(flag: int | None, cfg: RunConfig) -> int:
    """``--seed`` beats the config, which beats ``ETNET_SEED``; the fallback is 0."""
    if flag is not None:
        return flag
    if cfg.seed is not None:
        return cfg.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return 0
