"""HTTP facade over the experiment runners and a query-counted model oracle.

Run endpoints execute synchronously and write the same run directories the
CLI produces. The oracle endpoints serve a loaded model's prediction scores
while metering every row through a ledger, which is exactly the interface a
black-box attack sees.
"""

from __future__ import annotations

import datetime
import os
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..core import QueryLedger
from ..estimators import QueryOracle
from ..nn import load_model
from ..runner import (ConfigError, MissingArtifactError, run_attack,
                      run_batch_cmd, run_report, run_train)
from .schemas import (AttackRequest, BatchRequest, HealthResponse,
                      LedgerResponse, OracleLoadRequest, OracleLoadResponse,
                      PredictRequest, PredictResponse, ReportRequest,
                      RunResponse, TrainRequest)

RUN_ROOT_ENV = "ADVQUERY_RUN_ROOT"


def resolve_run_dir(run_root: Path, command: str, run_name: str | None) -> Path:
    if run_name:
        return run_root / run_name
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    return run_root / f"{command}-{stamp}"


def _execute(fn, cfg, run_dir: Path) -> RunResponse:
    try:
        summary = fn(cfg, run_dir)
    except ConfigError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    except MissingArtifactError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return RunResponse(run_dir=str(run_dir), summary=summary)


def create_app(run_root: str | Path | None = None) -> FastAPI:
    root = Path(run_root or os.environ.get(RUN_ROOT_ENV, "runs"))
    app = FastAPI(title="advquery", version=__version__)
    oracles: dict[str, QueryOracle] = {}

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/runs/train", response_model=RunResponse)
    def train(request: TrainRequest):
        run_dir = resolve_run_dir(root, "train", request.run_name)
        return _execute(run_train, request.config, run_dir)

    @app.post("/runs/attack", response_model=RunResponse)
    def attack(request: AttackRequest):
        run_dir = resolve_run_dir(root, "attack", request.run_name)
        return _execute(run_attack, request.config, run_dir)

    @app.post("/runs/batch", response_model=RunResponse)
    def batch(request: BatchRequest):
        run_dir = resolve_run_dir(root, "batch", request.run_name)
        return _execute(run_batch_cmd, request.config, run_dir)

    @app.post("/runs/report", response_model=RunResponse)
    def report(request: ReportRequest):
        run_dir = resolve_run_dir(root, "report", request.run_name)
        return _execute(run_report, request.config, run_dir)

    @app.post("/oracles", response_model=OracleLoadResponse)
    def load_oracle(request: OracleLoadRequest):
        path = Path(request.model_path)
        if not path.exists():
            raise HTTPException(status_code=404,
                                detail=f"model not found: {path}")
        model = load_model(path)
        oracles[request.oracle_id] = QueryOracle(model, QueryLedger())
        return OracleLoadResponse(oracle_id=request.oracle_id,
                                  input_dim=model.input_dim,
                                  num_classes=model.num_classes)

    def _oracle(oracle_id: str) -> QueryOracle:
        oracle = oracles.get(oracle_id)
        if oracle is None:
            raise HTTPException(status_code=404,
                                detail=f"no oracle loaded as {oracle_id!r}")
        return oracle

    @app.post("/oracles/{oracle_id}/predict", response_model=PredictResponse)
    def predict(oracle_id: str, request: PredictRequest):
        oracle = _oracle(oracle_id)
        if not request.inputs:
            raise HTTPException(status_code=400, detail="empty inputs")
        xs = np.asarray(request.inputs, dtype=np.float64)
        if xs.ndim != 2 or xs.shape[1] != oracle.model.input_dim:
            raise HTTPException(
                status_code=400,
                detail=f"inputs must be rows of length {oracle.model.input_dim}")
        out = oracle.query_probs(xs, seed_id=request.seed_id)
        return PredictResponse(probs=[list(map(float, row)) for row in out],
                               queries_total=oracle.ledger.total)

    @app.get("/oracles/{oracle_id}/ledger", response_model=LedgerResponse)
    def ledger(oracle_id: str):
        oracle = _oracle(oracle_id)
        return LedgerResponse(
            total=oracle.ledger.total,
            per_seed={str(k): v for k, v in oracle.ledger.per_seed.items()},
        )

    return app


app = create_app()
