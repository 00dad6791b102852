"""Run configuration schemas shared by the service, the CLI, and the runner.

Configs are plain JSON documents validated with pydantic; a frozen copy of
the validated config is written into every run directory so any run can be
reproduced from its manifest alone.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, field_validator


class DatasetSpec(BaseModel):
    kind: Literal["digits", "synthetic", "idx"] = "digits"
    # synthetic blobs
    n: int = 1000
    classes: int = 10
    dim: int = 16
    separation: float = 2.0
    rng_seed: int = 0
    # idx file pair
    images_path: str | None = None
    labels_path: str | None = None
    downsample: bool = False  # 2x2 mean-pool images


class ModelSpec(BaseModel):
    hidden_sizes: list[int] = Field(default_factory=lambda: [64])
    epochs: int = 30
    lr: float = 0.1
    batch_size: int = 32


class AdversarialTrainSpec(BaseModel):
    """Desk-scale adversarial training: rounds of PGD examples mixed into SGD."""

    epsilon: float = 0.3
    pgd_steps: int = 10
    rounds: int = 2
    epochs_per_round: int = 2
    sample_size: int = 300  # training points perturbed per round


class TrainConfig(BaseModel):
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    train_fraction: float = 0.7
    target: ModelSpec = Field(default_factory=ModelSpec)
    target_adversarial: AdversarialTrainSpec | None = None
    local_models: list[ModelSpec] = Field(
        default_factory=lambda: [ModelSpec(hidden_sizes=[48]),
                                 ModelSpec(hidden_sizes=[32]),
                                 ModelSpec(hidden_sizes=[24])])
    master_seed: int = 0

    @field_validator("train_fraction")
    @classmethod
    def _fraction_in_range(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        return v


class AttackCommon(BaseModel):
    """Fields shared by single-run attacks and batch scheduling runs."""

    models_dir: str
    dataset: DatasetSpec | None = None  # default: the train run's dataset
    goal: Literal["targeted", "untargeted"] = "untargeted"
    per_class: int = 100
    n_seeds: int | None = None
    estimator: Literal["zoo", "autozoom", "nes"] = "nes"
    start: Literal["seed", "candidate"] = "candidate"
    epsilon: float = 0.3
    max_queries: int = 4000
    delta: float = 1e-3
    samples: int = 50
    step_size: float | None = None
    pgd_steps: int = 100
    pgd_step_size: float | None = None
    master_seed: int = 0


class AttackConfig(AttackCommon):
    tune: bool = False
    tune_period: int = 50
    tune_threshold_c: int = 60000
    tune_epochs: int = 3
    tune_lr: float = 0.05
    tune_batch_size: int = 32
    measure_transfer: bool = False  # transfer rate before/after on a held-out set
    heldout: int = 100


class BatchConfig(AttackCommon):
    strategies: list[Literal["two_phase", "random", "retro_optimal",
                             "loss_only"]] = Field(
        default_factory=lambda: ["two_phase", "random", "retro_optimal"])

    @field_validator("strategies")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("need at least one strategy")
        return v


class ReportConfig(BaseModel):
    run_dirs: list[str]

    @field_validator("run_dirs")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("need at least one run directory")
        return v
