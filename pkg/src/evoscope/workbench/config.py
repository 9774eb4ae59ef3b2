"""Run configuration: one documented JSON structure for everything.

A run config names a task instance, an operator, the evolution settings,
and (for model-backed operators) how to reach the gateway.  All seeds
are explicit; nothing is ever seeded from the clock.
"""

import hashlib
import json
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from evoscope.evolution import EvolutionConfig
from evoscope.gateway import Gateway, HttpBackend, MockBackend
from evoscope.operators import OperatorSpec
from evoscope.tasks import BinPackTask, SymregDataset, SymregTask, Task, TspTask


class TaskConfig(BaseModel):
    family: Literal["tsp", "symreg", "binpack"]
    instance_seed: int = 0
    # tours
    n_cities: int = Field(default=30, ge=3)
    # expressions
    benchmark: Literal["osc1", "osc2", "synthetic"] = "osc1"
    expression: Optional[str] = None
    variables: List[str] = ["x", "v"]
    n_points: int = Field(default=100, ge=4)
    # packing
    n_instances: int = Field(default=5, ge=1)
    n_items: int = Field(default=50, ge=1)
    capacity: float = Field(default=100.0, gt=0.0)

    @model_validator(mode="after")
    def _check_synthetic(self):
        if self.family == "symreg" and self.benchmark == "synthetic":
            if not self.expression:
                raise ValueError("synthetic symreg needs an expression")
        return self


def build_task(cfg: TaskConfig) -> Task:
    if cfg.family == "tsp":
        return TspTask.random(cfg.n_cities, cfg.instance_seed)
    if cfg.family == "binpack":
        return BinPackTask.random(cfg.instance_seed, cfg.n_instances,
                                  cfg.n_items, cfg.capacity)
    if cfg.benchmark == "synthetic":
        dataset = SymregDataset.from_expression(
            cfg.expression, tuple(cfg.variables), cfg.instance_seed, cfg.n_points
        )
        return SymregTask(dataset, "synthetic")
    return SymregTask.oscillator(cfg.benchmark, cfg.instance_seed, cfg.n_points)


class OperatorConfig(BaseModel):
    kind: Literal["llm", "scripted-2opt", "scripted-subtree",
                  "scripted-shuffle", "mixed"]
    model: Optional[str] = None
    temperature: float = 0.7
    rho: Optional[float] = None
    strong: Optional["OperatorConfig"] = None
    weak: Optional["OperatorConfig"] = None

    def to_spec(self) -> OperatorSpec:
        spec = OperatorSpec(
            kind=self.kind,
            model=self.model,
            temperature=self.temperature,
            rho=self.rho,
            strong=self.strong.to_spec() if self.strong else None,
            weak=self.weak.to_spec() if self.weak else None,
        )
        spec.validate()
        return spec

    def uses_llm(self) -> bool:
        if self.kind == "llm":
            return True
        return any(c.uses_llm() for c in (self.strong, self.weak) if c)


class EvolutionSettings(BaseModel):
    n_init: int = 40
    elite_fraction: float = 0.2
    parents_per_prompt: int = 3
    offspring_per_generation: int = 10
    capacity: int = 40
    generations: int = 30
    seed: int = 21

    def to_config(self, seed: Optional[int] = None) -> EvolutionConfig:
        cfg = EvolutionConfig(
            n_init=self.n_init,
            elite_fraction=self.elite_fraction,
            parents_per_prompt=self.parents_per_prompt,
            offspring_per_generation=self.offspring_per_generation,
            capacity=self.capacity,
            generations=self.generations,
            seed=self.seed if seed is None else seed,
        )
        cfg.validate()
        return cfg


class GatewayConfig(BaseModel):
    mock_replies: Optional[str] = None   # JSONL path; scripted offline backend
    url: Optional[str] = None
    api_key: Optional[str] = None
    max_retries: int = 3

    def build(self) -> Gateway:
        if self.mock_replies:
            backend = MockBackend.from_jsonl(self.mock_replies)
        else:
            backend = HttpBackend(self.url, self.api_key)
        return Gateway(backend, max_retries=self.max_retries)


class RunConfig(BaseModel):
    task: TaskConfig
    operator: OperatorConfig
    evolution: EvolutionSettings = EvolutionSettings()
    gateway: Optional[GatewayConfig] = None
    output_dir: str
    repetitions: int = Field(default=2, ge=1)

    @model_validator(mode="after")
    def _check_gateway(self):
        if self.operator.uses_llm() and self.gateway is None:
            raise ValueError("model-backed operators need a gateway block")
        return self


def load_run_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return RunConfig.model_validate(payload)


def config_hash(cfg: BaseModel) -> str:
    """Stable digest of the canonical JSON form (first 16 hex chars)."""
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
