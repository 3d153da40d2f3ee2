"""Experiment configuration: a strict JSON schema validated with pydantic."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator, ValidationInfo

from . import tensornet as tn
from . import transforms as T
from .dataset import MNIST_FILES, mnist_dir
from .mutation import Kind

TECHNIQUES = ("coverage", "mt", "mut", "ct", "dt", "apt")


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TransformConfig(_Strict):
    kind: str
    params: list[float] = []
    mode: Literal["fixed", "random"] = "random"
    seed: int = 0
    specs: list["TransformConfig"] = []

    @model_validator(mode="after")
    def _valid(self):
        try:
            self.to_spec()
        except T.TransformError as exc:
            raise ValueError(str(exc)) from None
        return self

    def to_spec(self) -> T.TransformSpec:
        if self.kind == "compose":
            return T.compose([s.to_spec() for s in self.specs])
        return T.TransformSpec(self.kind, tuple(self.params), self.mode, self.seed)


class DataConfig(_Strict):
    mnist_dir: str | None = None
    train_subsample: int | None = Field(None, ge=1)
    test_limit: int | None = Field(None, ge=1)

    def directory(self) -> Path:
        return Path(self.mnist_dir) if self.mnist_dir else mnist_dir()


class TrainSection(_Strict):
    architecture: str = "baseline"
    epochs: int = Field(10, ge=1)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(0.01, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)

    @field_validator("architecture")
    @classmethod
    def _known(cls, v):
        if v not in tn.ARCHITECTURES:
            raise ValueError(f"unknown architecture {v!r}; known: {sorted(tn.ARCHITECTURES)}")
        return v

    def train_config(self, seed: int) -> tn.TrainConfig:
        return tn.TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.momentum, seed,
                              self.architecture)


class CoverageSection(_Strict):
    thresholds: list[float] = [0.0, 0.25, 0.5, 0.75]
    top_k: list[int] = [1, 3]
    inputs: int = Field(1000, ge=1)
    dsa_reference: int = Field(5000, ge=2)

    @field_validator("thresholds")
    @classmethod
    def _range(cls, v):
        if any(not 0 <= t <= 1 for t in v):
            raise ValueError("thresholds must lie in [0, 1]")
        return v


class MtSection(_Strict):
    configs: list[TransformConfig] = Field(min_length=1)
    regimes: list[Literal["WithoutAug", "TrainAugOnly", "TestAugOnly", "TrainAndTestAug"]] = [
        "WithoutAug", "TrainAugOnly", "TestAugOnly", "TrainAndTestAug"]


class MutSection(_Strict):
    kinds: list[Kind] = [Kind.GF, Kind.WS, Kind.NEB, Kind.NAI, Kind.NS]
    ratios: list[float] = [0.01, 0.1, 0.2, 0.3, 0.4, 0.5]
    seeds: list[int] = [0]
    layer_kinds: list[Kind] = [Kind.LD, Kind.LA, Kind.AFR]
    layer_seeds: list[int] = [0]

    @field_validator("ratios")
    @classmethod
    def _ratios(cls, v):
        if any(not 0 <= r <= 1 for r in v):
            raise ValueError("ratios must lie in [0, 1]")
        if v != sorted(v):
            raise ValueError("ratios must be sorted ascending")
        return v

    @model_validator(mode="after")
    def _levels(self):
        if any(not k.neuron_level for k in self.kinds):
            raise ValueError("kinds holds neuron-level operators only (use layer_kinds)")
        if any(k.neuron_level for k in self.layer_kinds):
            raise ValueError("layer_kinds holds layer-level operators only")
        return self


class DomainConfig(_Strict):
    name: str
    levels: list

    @model_validator(mode="after")
    def _levels(self):
        if len(self.levels) < 2:
            raise ValueError(f"domain {self.name!r} needs at least two levels")
        return self


class CtSection(_Strict):
    domains: list[DomainConfig] = []
    strength: int = Field(2, ge=2)
    evaluate_rows: bool = True
    neuron_strengths: dict[int, int] = {}
    neuron_inputs: int = Field(500, ge=1)
    smoke: bool = True

    @model_validator(mode="after")
    def _strength(self):
        if self.domains and self.strength > len(self.domains):
            raise ValueError(f"strength {self.strength} exceeds the {len(self.domains)} domains")
        return self


class DtPool(_Strict):
    source: Literal["clean", "mr", "train_holdout"] = "train_holdout"
    mr: TransformConfig | None = None
    size: int = Field(10000, ge=1)

    @model_validator(mode="after")
    def _needs_mr(self):
        if self.source == "mr" and self.mr is None:
            raise ValueError("source 'mr' needs an 'mr' transform")
        return self


class DtSection(_Strict):
    variants: list[dict] = Field([{"seed": 1}, {"seed": 2}], min_length=1)
    pool: DtPool = DtPool()
    retrain: bool = True
    retrain_epochs: int = Field(2, ge=1)
    retrain_learning_rate: float = Field(0.002, gt=0)
    replay_size: int = Field(2000, ge=0)


class LcrConfig(_Strict):
    mutants: int = Field(50, ge=1)
    ratio: float = Field(0.005, ge=0, le=1)
    quantile: float = Field(95.0, ge=0, le=100)
    epsilon: float = Field(0.2, ge=0)


class AptSection(_Strict):
    attack: Literal["fgsm", "ifgsm"] = "fgsm"
    epsilons: list[float] = [0.0, 0.05, 0.1, 0.2, 0.3]
    steps: int = Field(10, ge=1)
    subset: int = Field(1000, ge=1)
    deepfool: int = Field(0, ge=0)
    lcr: LcrConfig | None = None
    corpus: bool = True

    @field_validator("epsilons")
    @classmethod
    def _grid(cls, v):
        if not v or v[0] != 0 or v != sorted(v):
            raise ValueError("epsilons must be ascending and start at 0")
        return v


class ExperimentConfig(_Strict):
    seed: int = 0
    output_dir: str = "dltest-out"
    data: DataConfig = DataConfig()
    train: TrainSection = TrainSection()
    coverage: CoverageSection | None = None
    mt: MtSection | None = None
    mut: MutSection | None = None
    ct: CtSection | None = None
    dt: DtSection | None = None
    apt: AptSection | None = None

    @model_validator(mode="after")
    def _some_technique(self, info: ValidationInfo):
        if (info.context or {}).get("require_technique", True) and not any(getattr(self, t) is not None for t in TECHNIQUES):
            raise ValueError(f"at least one technique section is required: {', '.join(TECHNIQUES)}")
        return self

    def techniques(self) -> list[str]:
        return [t for t in TECHNIQUES if getattr(self, t) is not None]


def _path(loc) -> str:
    out = "$"
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else f".{part}"
    return out


def _first_error(exc: ValidationError) -> str:
    err = exc.errors()[0]
    msg = err["msg"].removeprefix("Value error, ")
    return f"{_path(err['loc'])}: {msg}"


def config_from_dict(data: dict, check_files: bool = True, require_technique: bool = True) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.model_validate(data, context={"require_technique": require_technique})
    except ValidationError as exc:
        raise ConfigError(_first_error(exc)) from None
    if check_files:
        directory = cfg.data.directory()
        for split in MNIST_FILES.values():
            for name in split:
                if not (directory / name).exists():
                    raise ConfigError(f"$.data.mnist_dir: missing file {directory / name}")
    return cfg


def parse_config(path, check_files: bool = True, require_technique: bool = True) -> ExperimentConfig:
    """Load and validate a JSON config; errors name the offending JSON path."""
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError("$: config must be a JSON object")
    return config_from_dict(data, check_files, require_technique)


def serialize(cfg: ExperimentConfig) -> dict:
    """Canonical form: every field explicit, JSON-compatible."""
    return cfg.model_dump(mode="json")
