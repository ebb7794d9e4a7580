"""HTTP service exposing the experiment runners.

Each endpoint accepts the same pydantic config models as the CLI, runs one
experiment in-process and returns the report plus the produced files as
strings; clients decide where to write them. Validation errors surface as
422 responses with exact field paths.
"""

from __future__ import annotations

from fastapi import FastAPI
from pydantic import BaseModel

from . import __version__
from .config import ExperimentConfig, SweepConfig
from .experiments import RunOutcome, run_gauss, run_inequalities, run_oracle_compare, run_solve, run_sweep


class HealthResponse(BaseModel):
    status: str
    version: str


class RunResponse(BaseModel):
    """Uniform response: exit_code 0 = converged/pass, 2 = diverged/failed checks."""

    exit_code: int
    status: str
    report: dict
    files: dict[str, str]


class SolveRequest(BaseModel):
    config: ExperimentConfig


class SweepRequest(BaseModel):
    config: SweepConfig


def _respond(outcome: RunOutcome) -> RunResponse:
    status = outcome.report.get("status")
    if status is None:
        status = "ok" if outcome.exit_code == 0 else "failed"
    return RunResponse(
        exit_code=outcome.exit_code,
        status=str(status),
        report=outcome.report,
        files=outcome.files,
    )


def create_app() -> FastAPI:
    app = FastAPI(
        title="bsesolve",
        description="Fixed-point solvers and diagnostics for backward stochastic equations",
        version=__version__,
    )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/solve", response_model=RunResponse)
    def solve(request: SolveRequest) -> RunResponse:
        return _respond(run_solve(request.config))

    @app.post("/oracle", response_model=RunResponse)
    def oracle(request: SolveRequest) -> RunResponse:
        return _respond(run_oracle_compare(request.config))

    @app.post("/inequalities", response_model=RunResponse)
    def inequalities(request: SolveRequest) -> RunResponse:
        return _respond(run_inequalities(request.config))

    @app.post("/gauss", response_model=RunResponse)
    def gauss(request: SolveRequest) -> RunResponse:
        return _respond(run_gauss(request.config))

    @app.post("/sweep", response_model=RunResponse)
    def sweep(request: SweepRequest) -> RunResponse:
        return _respond(run_sweep(request.config))

    return app


app = create_app()
