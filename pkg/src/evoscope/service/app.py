"""FastAPI wrapper around the command cores.

Every endpoint is a thin shim: validate the request model, call the
matching command, map domain errors to 400 with a readable detail.
"""

from fastapi import FastAPI, HTTPException

import evoscope
from evoscope.gateway import ConfigurationError, TransportError
from evoscope.stats import ColumnGapError, ConstantColumnError
from evoscope.workbench import commands
from evoscope.workbench.io import SchemaVersionError
from evoscope.service import schemas

_CLIENT_ERRORS = (
    ValueError,
    KeyError,
    FileNotFoundError,
    ColumnGapError,
    ConstantColumnError,
    ConfigurationError,
    TransportError,
    SchemaVersionError,
)


def _describe(exc: Exception) -> str:
    # KeyError's str() wraps the message in quotes; unwrap just that case.
    if isinstance(exc, KeyError) and exc.args:
        text = str(exc.args[0])
    else:
        text = str(exc)
    return f"{type(exc).__name__}: {text}" if text else type(exc).__name__


def create_app() -> FastAPI:
    app = FastAPI(title="evoscope", version=evoscope.__version__)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=evoscope.__version__)

    @app.post("/run", response_model=schemas.RunResponse)
    def run(req: schemas.RunRequest):
        try:
            return commands.cmd_run(req.config)
        except _CLIENT_ERRORS as exc:
            raise HTTPException(status_code=400, detail=_describe(exc))

    @app.post("/analyze", response_model=schemas.AnalyzeResponse)
    def analyze(req: schemas.AnalyzeRequest):
        try:
            return commands.cmd_analyze(req.trajectories, req.out_dir)
        except _CLIENT_ERRORS as exc:
            raise HTTPException(status_code=400, detail=_describe(exc))

    @app.post("/stats", response_model=schemas.StatsResponse)
    def stats(req: schemas.StatsRequest):
        try:
            return commands.cmd_stats(req.table, req.spec, req.out_path)
        except _CLIENT_ERRORS as exc:
            raise HTTPException(status_code=400, detail=_describe(exc))

    @app.post("/mds", response_model=schemas.MdsResponse)
    def mds(req: schemas.MdsRequest):
        try:
            return commands.cmd_mds(
                trajectories=req.trajectories,
                distances=req.distances,
                out_dir=req.out_dir,
                max_iter=req.max_iter,
                eps=req.eps,
                seed=req.seed,
                cap_per_bucket=req.cap_per_bucket,
                total_cap=req.total_cap,
            )
        except _CLIENT_ERRORS as exc:
            raise HTTPException(status_code=400, detail=_describe(exc))

    @app.post("/zeroshot", response_model=schemas.ZeroshotResponse)
    def zeroshot(req: schemas.ZeroshotRequest):
        try:
            return commands.cmd_zeroshot(req.task, req.gateway, req.model,
                                         req.out_path)
        except _CLIENT_ERRORS as exc:
            raise HTTPException(status_code=400, detail=_describe(exc))

    @app.post("/cost", response_model=schemas.CostResponse)
    def cost(req: schemas.CostRequest):
        try:
            return commands.cmd_cost(req.ledgers, req.prices, req.out_path)
        except _CLIENT_ERRORS as exc:
            raise HTTPException(status_code=400, detail=_describe(exc))

    return app
