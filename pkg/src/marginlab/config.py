"""Experiment configuration: JSON documents validated with pydantic."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import data, losses
from .trainer import TrainConfig

SCHEMA = "marginlab/experiment@1"


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TwoMoonsData(_Strict):
    generator: Literal["two_moons"]
    n_train: int = Field(2000, ge=2)
    n_test: int = Field(20000, ge=2)
    tail_prob: float = Field(0.05, gt=0, lt=1)
    noise: float = Field(0.1, ge=0)


class GaussianExpData(_Strict):
    generator: Literal["gaussian_exp"]
    num_classes: int = Field(10, ge=2)
    dim: int = Field(8, ge=1)
    mean_scale: float = Field(1.5, gt=0)
    variance: float = Field(1.0, gt=0)
    n_max: int = Field(500, ge=1)
    rho: float = Field(100.0, ge=1)
    n_test_per_class: int = Field(1000, ge=1)


class CsvData(_Strict):
    generator: Literal["csv"]
    train: str
    test: str
    num_classes: int = Field(ge=2)


DatasetBlock = Annotated[Union[TwoMoonsData, GaussianExpData, CsvData], Field(discriminator="generator")]


class Schedule(_Strict):
    """Per-class margins ``scale * base^exponent`` with base class priors or counts."""

    base: Literal["priors", "counts"] = "priors"
    exponent: float = 1.0
    scale: float = 0.0


class LossBlock(_Strict):
    delta: Literal["zero", "ldam", "tan", "logadj"] = "zero"
    alpha: Schedule = Schedule()
    beta: Schedule = Schedule()
    eps: Schedule = Schedule()
    lam_pull: float = Field(0.0, ge=0)
    lam_push: float = Field(0.0, ge=0)
    lam_center: float = Field(0.0, ge=0)
    lam_dro: float = Field(0.0, ge=0)
    s2: float = Field(1.0, gt=0)


class TrainingBlock(_Strict):
    epochs: int = Field(256, ge=0)
    batch_size: int = Field(128, ge=1)
    lr: float = Field(0.1, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(5e-4, ge=0)
    schedule: Literal["constant", "cosine", "warmup_step"] = "constant"
    warmup_epochs: int = Field(0, ge=0)
    decay_epochs: list[int] = []
    decay_factor: float = Field(0.1, gt=0)
    head: Literal["learned", "prototype"] = "learned"
    v2: float = Field(1.0, gt=0)
    tau: float = Field(0.0, ge=0)


class ExperimentConfig(_Strict):
    schema_: Literal["marginlab/experiment@1"] = Field(alias="schema")
    dataset: DatasetBlock
    architecture: list[int] = Field(min_length=1)
    loss: LossBlock = LossBlock()
    training: TrainingBlock = TrainingBlock()
    output_dir: str = "out"
    seeds: list[int] = Field([0], min_length=1)

    @field_validator("architecture")
    @classmethod
    def _positive(cls, v):
        if any(s <= 0 for s in v):
            raise ValueError("layer sizes must be positive")
        return v

    @field_validator("seeds")
    @classmethod
    def _unique(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("seeds must be distinct")
        return v

    def dump(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def _format_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"] if not str(p) in ("two_moons", "gaussian_exp", "csv"))
        lines.append(f"{loc or '<root>'}: {e['msg']}")
    return "; ".join(lines)


def parse_config(doc: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as err:
        raise ConfigError(_format_error(err)) from None


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be a JSON object")
    return parse_config(doc)


# -- resolving blocks into objects -----------------------------------------------

TEST_SEED_OFFSET = 10_007


def build_datasets(block, seed: int, base_dir: Path | None = None):
    """Train and test sets for one seed; test data comes from an independent stream."""
    if isinstance(block, TwoMoonsData):
        tr = data.two_moons_lt(block.n_train, block.tail_prob, block.noise, seed=seed)
        te = data.two_moons_lt(block.n_test, block.tail_prob, block.noise, seed=seed + TEST_SEED_OFFSET)
        return tr, te
    if isinstance(block, GaussianExpData):
        spec = data.random_gaussian_spec(block.num_classes, block.dim, block.mean_scale, block.variance, seed=seed)
        counts = data.exp_profile(block.n_max, block.num_classes, block.rho)
        tr = data.gaussian_mixture_counts(spec, counts, seed=seed + 1)
        te = data.gaussian_mixture_counts(spec, np.full(block.num_classes, block.n_test_per_class),
                                          seed=seed + TEST_SEED_OFFSET)
        return tr, te
    root = base_dir or Path(".")
    return (data.Dataset.from_csv(root / block.train, block.num_classes),
            data.Dataset.from_csv(root / block.test, block.num_classes))


def _schedule(s: Schedule, train: data.Dataset) -> np.ndarray:
    base = train.priors if s.base == "priors" else train.counts.astype(float)
    return losses.alpha_schedule(base, s.exponent, s.scale)


def build_loss(block: LossBlock, train: data.Dataset) -> losses.LossSpec:
    if np.any(train.counts == 0):
        raise ConfigError("dataset: every class needs at least one training sample")
    return losses.LossSpec(
        delta=losses.delta_schedule(train.priors, block.delta),
        alpha=_schedule(block.alpha, train),
        beta=_schedule(block.beta, train),
        eps=_schedule(block.eps, train),
        lam_pull=block.lam_pull, lam_push=block.lam_push,
        lam_center=block.lam_center, lam_dro=block.lam_dro, s2=block.s2,
    )


def build_train_config(block: TrainingBlock, seed: int) -> TrainConfig:
    fields = block.model_dump(exclude={"tau"})
    fields["decay_epochs"] = tuple(fields["decay_epochs"])
    return TrainConfig(seed=seed, **fields)


def layer_sizes(cfg: ExperimentConfig, train: data.Dataset) -> list[int]:
    return [train.dim, *cfg.architecture, train.num_classes]
