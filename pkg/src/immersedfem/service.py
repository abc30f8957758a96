"""FastAPI service wrapping the study harness.

Request/response bodies are pydantic models; the CLI talks to these endpoints
either in-process or against a running `immersed serve` instance.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .studies import StudyConfig, StudyRow, check_study, run_study


class StudyRequest(BaseModel):
    geometry: str = "circle:0.5,0.5,0.3"
    mesh_sizes: list[int] = Field(default=[8], min_length=1)
    p: int = 1
    stab: str = "none"
    tau: list[float] = [0.1, 0.1]
    beta_mode: Optional[str] = None
    beta_c: float = 10.0
    bc_cut: Optional[str] = None
    mms: str = "sinsin"
    eta_star: float = 1.0
    max_chain: int = 10
    quad_depth: int = 6
    quad_order: Optional[int] = None
    precond: str = "direct"
    preconds: list[str] = ["none", "jacobi", "as", "ms"]
    blocks: str = "cut"
    theta: float = 1e-12
    tol: float = 1e-8
    maxit: Optional[int] = None
    cond_method: str = "dense"
    sweep: str = ""
    seed: int = 42

    def to_config(self, study: str) -> StudyConfig:
        return StudyConfig(study=study, geometry=self.geometry,
                           mesh_sizes=tuple(self.mesh_sizes), p=self.p,
                           stab=self.stab, tau=tuple(self.tau),
                           beta_mode=self.beta_mode, beta_c=self.beta_c,
                           bc_cut=self.bc_cut, mms=self.mms,
                           eta_star=self.eta_star, max_chain=self.max_chain,
                           quad_depth=self.quad_depth, quad_order=self.quad_order,
                           precond=self.precond, preconds=tuple(self.preconds),
                           blocks=self.blocks, theta=self.theta, tol=self.tol,
                           maxit=self.maxit, cond_method=self.cond_method,
                           sweep=self.sweep, seed=self.seed)


class StudyRowModel(BaseModel):
    study: str
    geometry: str
    p: int
    stab: str
    precond: str = ""
    h: Optional[float] = None
    eta_min: Optional[float] = None
    kappa_raw: Optional[float] = None
    kappa_jacobi: Optional[float] = None
    lambda_min: Optional[float] = None
    lambda_max: Optional[float] = None
    energy_err: Optional[float] = None
    l2_err: Optional[float] = None
    iters: Optional[int] = None
    residual: Optional[float] = None
    runtime_ms: Optional[float] = None


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str


class StudyResponse(BaseModel):
    study: str
    rows: list[StudyRowModel]
    summary: dict
    checks: list[CheckResult]


class HealthResponse(BaseModel):
    status: str
    version: str


app = FastAPI(title="immersedfem", version=__version__)

_STUDIES = ("solve", "conditioning", "convergence", "schwarz", "stability")


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


def _run(study: str, request: StudyRequest) -> StudyResponse:
    config = request.to_config(study)
    try:
        rows, summary = run_study(config)
        checks = check_study(config, rows, summary)
    except Exception as exc:   # surfaced as a 400 with the failure reason
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return StudyResponse(study=study,
                         rows=[StudyRowModel(**r.record()) for r in rows],
                         summary=_jsonable(summary),
                         checks=[CheckResult(**c) for c in checks])


def _jsonable(obj):
    import numpy as np
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@app.post("/solve", response_model=StudyResponse)
def solve(request: StudyRequest) -> StudyResponse:
    return _run("solve", request)


@app.post("/studies/conditioning", response_model=StudyResponse)
def conditioning(request: StudyRequest) -> StudyResponse:
    return _run("conditioning", request)


@app.post("/studies/convergence", response_model=StudyResponse)
def convergence(request: StudyRequest) -> StudyResponse:
    return _run("convergence", request)


@app.post("/studies/schwarz", response_model=StudyResponse)
def schwarz(request: StudyRequest) -> StudyResponse:
    return _run("schwarz", request)


@app.post("/studies/stability", response_model=StudyResponse)
def stability(request: StudyRequest) -> StudyResponse:
    return _run("stability", request)
