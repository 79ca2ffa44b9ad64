"""Experiment configuration: a YAML file validated against a pydantic schema.

Unknown keys are rejected and every field is checked, including the derived
library configs, before any computation starts.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .baselines import HUMAN, RANDOM, SEARCHED
from .compression import CompressConfig, GeneratorTrainConfig
from .errors import ConfigError
from .quantizer import QuantScheme
from .search_engine import SearchConfig
from .zoo.models import ZOO


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Strict):
    data_dir: Optional[str] = None
    source: Literal["auto", "bundled", "idx", "pickle"] = "auto"
    download: bool = False
    image_size: Optional[int] = None


class PretrainSection(_Strict):
    seed: int = 0
    epochs: Optional[int] = Field(None, ge=1)
    batch_size: int = Field(64, ge=1)
    lr: float = Field(1e-3, gt=0)
    checkpoint: Optional[str] = None


class MacroSection(_Strict):
    base_channels: int = Field(32, ge=1)
    latent_dim: int = Field(100, ge=1)
    embed_dim: Optional[int] = Field(None, ge=1)


class SearchSection(_Strict):
    epochs: int = Field(10, ge=1)
    weight_steps: int = Field(10, ge=0)
    arch_steps: int = Field(5, ge=0)
    batch_size: int = Field(32, ge=2)
    weight_lr: float = Field(1e-3, gt=0)
    arch_lr: float = Field(3e-4, gt=0)
    arch_weight_decay: float = Field(1e-3, ge=0)
    tau_start: float = Field(5.0, gt=0)
    tau_end: float = Field(0.5, gt=0)
    beta: float = Field(0.1, ge=0)
    gumbel_on_log_probs: bool = False
    checkpoint_every: int = Field(0, ge=0)
    paired_control: bool = False
    val_batches: int = Field(4, ge=1)

    def to_library(self, seed: int) -> SearchConfig:
        return SearchConfig(
            epochs=self.epochs, weight_steps=self.weight_steps, arch_steps=self.arch_steps,
            batch_size=self.batch_size, weight_lr=self.weight_lr, arch_lr=self.arch_lr,
            arch_weight_decay=self.arch_weight_decay, tau_start=self.tau_start, tau_end=self.tau_end,
            beta=self.beta, seed=seed, gumbel_on_log_probs=self.gumbel_on_log_probs,
        )


class GeneratorSection(_Strict):
    steps: int = Field(300, ge=0)
    batch_size: int = Field(32, ge=2)
    lr: float = Field(1e-3, gt=0)
    beta: float = Field(0.1, ge=0)

    def to_library(self, seed: int) -> GeneratorTrainConfig:
        return GeneratorTrainConfig(steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                                    beta=self.beta, seed=seed)


class CompressSection(_Strict):
    mode: Literal["quantize", "distill"] = "quantize"
    scheme: Optional[str] = "w4a4"
    student: Optional[str] = None
    epochs: int = Field(5, ge=1)
    steps_per_epoch: int = Field(50, ge=1)
    batch_size: int = Field(64, ge=2)
    kd_temperature: float = Field(1.0, gt=0)
    gamma: float = Field(1.0, ge=0)
    lr: float = Field(1e-3, gt=0)
    momentum: float = Field(0.9, ge=0)
    calib_batches: int = Field(4, ge=1)
    joint_generator: bool = False
    generator_lr: float = Field(1e-3, gt=0)
    beta: float = Field(0.1, ge=0)

    @field_validator("scheme")
    @classmethod
    def _scheme(cls, v):
        if v is not None:
            QuantScheme.parse(v)
        return v

    def to_library(self, seed: int, scheme: str | None = None) -> CompressConfig:
        scheme = scheme or self.scheme
        return CompressConfig(
            epochs=self.epochs, steps_per_epoch=self.steps_per_epoch, batch_size=self.batch_size,
            mode=self.mode, scheme=QuantScheme.parse(scheme) if self.mode == "quantize" else None,
            student=self.student, kd_temperature=self.kd_temperature, gamma=self.gamma, lr=self.lr,
            momentum=self.momentum, calib_batches=self.calib_batches, joint_generator=self.joint_generator,
            generator_lr=self.generator_lr, beta=self.beta, seed=seed,
        )


class ExperimentConfig(_Strict):
    model: str = "lenet_bn"
    data: DataSection = DataSection()
    pretrain: PretrainSection = PretrainSection()
    macro: MacroSection = MacroSection()
    search: SearchSection = SearchSection()
    generator_training: GeneratorSection = GeneratorSection()
    compress: CompressSection = CompressSection()
    generator: Literal["searched", "human", "random"] = SEARCHED
    arch_file: Optional[str] = None
    scales: list[float] = [1.0]
    # channel scales swept by ablate-scale
    ablation_scales: list[float] = [0.5, 1.0, 2.0]
    seeds: list[int] = [0]
    output: str = "runs"

    @field_validator("model")
    @classmethod
    def _model(cls, v):
        if v not in ZOO:
            raise ValueError(f"unknown zoo model {v!r}; choose from {sorted(ZOO)}")
        return v

    @field_validator("scales", "ablation_scales")
    @classmethod
    def _scales(cls, v):
        if not v or any(s <= 0 for s in v):
            raise ValueError("scales must be a non-empty list of positive numbers")
        return v

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if not v or len(set(v)) != len(v):
            raise ValueError("seeds must be a non-empty list without duplicates")
        return v

    def check(self) -> "ExperimentConfig":
        """Build every library config once so invalid combinations fail early."""
        self.search.to_library(self.seeds[0])
        self.generator_training.to_library(self.seeds[0])
        self.compress.to_library(self.seeds[0])
        return self


GENERATOR_KINDS = (SEARCHED, HUMAN, RANDOM)


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read YAML (or start from defaults), apply overrides, validate."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for dotted, value in (overrides or {}).items():
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from None
    return cfg.check()


def config_schema() -> str:
    return json.dumps(ExperimentConfig.model_json_schema(), indent=2)
