"""Request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..configs import AttackConfig, BatchConfig, ReportConfig, TrainConfig


class HealthResponse(BaseModel):
    status: str
    version: str


class RunRequestBase(BaseModel):
    run_name: str | None = None  # subdirectory under the run root


class TrainRequest(RunRequestBase):
    config: TrainConfig


class AttackRequest(RunRequestBase):
    config: AttackConfig


class BatchRequest(RunRequestBase):
    config: BatchConfig


class ReportRequest(RunRequestBase):
    config: ReportConfig


class RunResponse(BaseModel):
    run_dir: str
    summary: dict


class OracleLoadRequest(BaseModel):
    oracle_id: str
    model_path: str


class OracleLoadResponse(BaseModel):
    oracle_id: str
    input_dim: int
    num_classes: int


class PredictRequest(BaseModel):
    inputs: list[list[float]]
    seed_id: int | None = None  # per-seed ledger attribution


class PredictResponse(BaseModel):
    probs: list[list[float]]
    queries_total: int


class LedgerResponse(BaseModel):
    total: int
    per_seed: dict[str, int] = Field(default_factory=dict)
