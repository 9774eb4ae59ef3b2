"""Request and response models for the HTTP surface."""

from typing import Optional

from pydantic import BaseModel, Field

from evoscope.workbench.config import GatewayConfig, RunConfig, TaskConfig


class HealthResponse(BaseModel):
    status: str
    version: str


class RunRequest(BaseModel):
    config: RunConfig


class RunEntry(BaseModel):
    run_id: str
    path: str
    attempts: int
    best_fitness: float
    exchanges_path: Optional[str] = None
    gateway_calls: Optional[int] = None


class RunResponse(BaseModel):
    runs: list[RunEntry]
    config_hash: str
    manifest_path: str


class AnalyzeRequest(BaseModel):
    trajectories: str = Field(description="glob over trajectory JSONL files")
    out_dir: str


class AnalyzeResponse(BaseModel):
    runs_csv: str
    generation_csv: str
    novelty_csv: str
    n_runs: int


class StatsRequest(BaseModel):
    table: str = Field(description="descriptor or generation CSV path")
    spec: str
    out_path: Optional[str] = None


class StatsResponse(BaseModel):
    spec: str
    result: dict
    out_path: Optional[str] = None


class MdsRequest(BaseModel):
    trajectories: Optional[str] = None
    distances: Optional[str] = None
    out_dir: str
    max_iter: int = 300
    eps: float = 1e-3
    seed: int = 42
    cap_per_bucket: int = 60
    total_cap: int = 4000


class MdsResponse(BaseModel):
    coords: list[str]
    manifest: dict


class ZeroshotRequest(BaseModel):
    task: TaskConfig
    gateway: GatewayConfig
    model: str
    out_path: Optional[str] = None


class ZeroshotSampleOut(BaseModel):
    temperature: float
    sample: int
    fitness: float
    valid: bool
    canon: str = ""
    error: Optional[str] = None


class ZeroshotResponse(BaseModel):
    task_id: str
    model: str
    best_fitness: float
    all_invalid: bool
    calls: int
    samples: list[ZeroshotSampleOut]


class CostRequest(BaseModel):
    ledgers: str = Field(description="glob over exchange ledger JSONL files")
    prices: str = Field(description="price table JSON path")
    out_path: Optional[str] = None


class CostLine(BaseModel):
    model: str
    calls: int
    prompt_tokens: int
    completion_tokens: int
    cost: float
    priced: bool


class CostResponse(BaseModel):
    total_cost: float
    lines: list[CostLine]
    unpriced_models: list[str]
