"""Equation-discovery task: fit an expression to sampled (inputs, targets).

Genomes are ASTs from the expression language.  Raw fitness is the
negated mean squared error; candidates whose predictions go non-finite
anywhere on the inputs take the high-loss sentinel MSE of 1e6.  Distance
between genomes is behavioural: one minus the cosine similarity of their
outputs on a fixed probe grid, with non-finite probe outputs zeroed.

The bundled generators produce damped-oscillator data: acceleration as a
function of position/velocity (and time for the driven variant), from a
documented ground-truth expression whose coefficients are drawn per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from evoscope import expr
from evoscope.tasks.base import InvalidGenomeError, Task, cosine_behavior_distance

SENTINEL_MSE = 1e6
PROBE_POINTS = 64


@dataclass
class SymregDataset:
    """Sampled regression data plus the fixed probe grid for behaviour."""

    variables: tuple
    inputs: np.ndarray
    targets: np.ndarray
    probe_grid: np.ndarray
    ground_truth: str | None = None
    seed: int | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        self.probe_grid = np.asarray(self.probe_grid, dtype=float)
        d = len(self.variables)
        if self.inputs.ndim != 2 or self.inputs.shape[1] != d:
            raise ValueError("inputs must be (m, d) with d = len(variables)")
        if self.targets.shape != (self.inputs.shape[0],):
            raise ValueError("targets must align with inputs")
        if self.probe_grid.ndim != 2 or self.probe_grid.shape[1] != d:
            raise ValueError("probe grid must be (p, d)")

    @classmethod
    def from_expression(
        cls,
        ground_truth: str,
        variables,
        seed: int,
        n_points: int = 100,
        low: float = -2.0,
        high: float = 2.0,
    ) -> "SymregDataset":
        """Sample inputs uniformly and label them with ``ground_truth``."""
        variables = tuple(variables)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5123]))
        inputs = rng.uniform(low, high, size=(n_points, len(variables)))
        ast = expr.parse(ground_truth, variables)
        ctx = expr.EvalContext(
            {name: inputs[:, i] for i, name in enumerate(variables)}
        )
        targets = expr.evaluate(ast, ctx)
        probe_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9406]))
        probe = probe_rng.uniform(low, high, size=(PROBE_POINTS, len(variables)))
        return cls(variables, inputs, targets, probe, ground_truth, seed)


def oscillator1(seed: int, n_points: int = 100) -> SymregDataset:
    """Damped nonlinear oscillator: a = -k*x - c*v - b*x^3."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x05C1]))
    k = expr.quantize(round(float(rng.uniform(0.5, 2.0)), 3))
    c = expr.quantize(round(float(rng.uniform(0.1, 0.5)), 3))
    b = expr.quantize(round(float(rng.uniform(0.2, 1.0)), 3))
    truth = f"-({k})*x - ({c})*v - ({b})*x^3"
    return SymregDataset.from_expression(truth, ("x", "v"), seed, n_points)


def oscillator2(seed: int, n_points: int = 100) -> SymregDataset:
    """Driven damped oscillator: a = -k*x - c*v + f*sin(w*t)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x05C2]))
    k = expr.quantize(round(float(rng.uniform(0.5, 2.0)), 3))
    c = expr.quantize(round(float(rng.uniform(0.1, 0.5)), 3))
    f = expr.quantize(round(float(rng.uniform(0.5, 1.5)), 3))
    w = expr.quantize(round(float(rng.uniform(0.5, 2.0)), 3))
    truth = f"-({k})*x - ({c})*v + ({f})*sin(({w})*t)"
    return SymregDataset.from_expression(truth, ("t", "x", "v"), seed, n_points)


def symreg_mse(ast: expr.Node, dataset: SymregDataset) -> float:
    """MSE on the dataset; non-finite predictions take the 1e6 sentinel."""
    ctx = expr.EvalContext(
        {name: dataset.inputs[:, i] for i, name in enumerate(dataset.variables)}
    )
    predictions = expr.evaluate(ast, ctx)
    if not np.all(np.isfinite(predictions)):
        return SENTINEL_MSE
    with np.errstate(over="ignore"):
        mse = float(np.mean((predictions - dataset.targets) ** 2))
    if not np.isfinite(mse):
        return SENTINEL_MSE
    return mse


class SymregTask(Task):
    family = "symreg"

    def __init__(self, dataset: SymregDataset, variant: str = "osc1"):
        self.dataset = dataset
        self.variant = variant
        self.task_id = f"symreg-{variant}-s{dataset.seed}"
        self._probe_cache: dict[str, np.ndarray] = {}

    @classmethod
    def oscillator(cls, variant: str, seed: int, n_points: int = 100) -> "SymregTask":
        if variant == "osc1":
            return cls(oscillator1(seed, n_points), variant)
        if variant == "osc2":
            return cls(oscillator2(seed, n_points), variant)
        raise ValueError(f"unknown variant {variant!r}")

    def initial_population(self, n: int) -> list:
        rng = np.random.default_rng(
            np.random.SeedSequence([self.dataset.seed or 0, 0x5EED])
        )
        return [expr.random_expr(rng, self.dataset.variables, 3) for _ in range(n)]

    def evaluate(self, genome) -> float:
        unknown = expr.variables_of(genome) - set(self.dataset.variables)
        if unknown:
            raise InvalidGenomeError(f"unbound variables {sorted(unknown)}")
        return -symreg_mse(genome, self.dataset)

    def distance(self, a, b) -> float:
        return cosine_behavior_distance(self._probe(a), self._probe(b))

    def _probe(self, genome) -> np.ndarray:
        key = self.canonical(genome)
        cached = self._probe_cache.get(key)
        if cached is None:
            ctx = expr.EvalContext(
                {
                    name: self.dataset.probe_grid[:, i]
                    for i, name in enumerate(self.dataset.variables)
                }
            )
            out = expr.evaluate(genome, ctx)
            cached = np.where(np.isfinite(out), out, 0.0)
            self._probe_cache[key] = cached
        return cached

    def canonical(self, genome) -> str:
        return expr.canonicalize(genome)

    def parse_genome(self, text: str):
        try:
            return expr.parse(text, self.dataset.variables)
        except expr.ExprError as exc:
            raise InvalidGenomeError(str(exc)) from exc

    @property
    def invalid_fitness(self) -> float:
        return -SENTINEL_MSE

    def variables(self):
        return self.dataset.variables

    # Prompt surface -------------------------------------------------------

    def task_desc(self) -> str:
        names = ", ".join(self.dataset.variables)
        return (
            "Find a closed-form expression that predicts the observed output "
            f"from the input variables ({names}). The score of a candidate is "
            "its mean squared error on the data (lower is better)."
        )

    def question(self) -> str:
        sample = np.round(self.dataset.inputs[:20], 4).tolist()
        targets = np.round(self.dataset.targets[:20], 4).tolist()
        return json.dumps(
            {
                "variables": list(self.dataset.variables),
                "inputs": sample,
                "outputs": targets,
            }
        )

    def parent_line(self, canon: str, raw_fitness: float) -> str:
        return json.dumps(
            {"expr": canon, "mse_score": round(self.display_score(raw_fitness), 6)}
        )

    def prompt_fields(self) -> dict:
        return {"n": len(self.dataset.variables)}
