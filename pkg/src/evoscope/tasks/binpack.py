"""Online bin packing task driven by an evolved priority expression.

Items arrive in order.  For each item the priority expression is
evaluated over the residual capacities of the bins that can still accept
it (variables: ``item`` scalar, ``bins`` vector of feasible residuals);
the item goes to the feasible bin with the highest priority, ties to the
lowest index, and to a fresh bin when nothing fits.  Raw fitness is the
negated mean bin count over the instance set.

Behaviour distance averages, over a fixed set of probe scenarios, one
minus the cosine similarity of the two priority vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from evoscope import expr
from evoscope.tasks.base import InvalidGenomeError, Task, cosine_behavior_distance

VARIABLES = ("item", "bins")
PROBE_SCENARIOS = 16
PROBE_BINS = 8

# Canonical priority rules used as the initial population.
SEED_RULES = (
    "-(bins - item)",       # best fit: tightest feasible bin wins
    "bins - item",          # worst fit: roomiest feasible bin wins
    "1",                    # first fit: constant priority, ties to lowest index
    "-(bins - item)^2",
    "bins/item",
    "-bins",
    "item - bins",
)


@dataclass
class BinPackInstance:
    """One bin capacity plus the ordered item sizes."""

    capacity: float
    items: np.ndarray

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=float)
        if self.capacity <= 0:
            raise ValueError("capacity must be positive")
        if self.items.ndim != 1 or self.items.size == 0:
            raise ValueError("items must be a nonempty vector")
        if np.any(self.items <= 0) or np.any(self.items > self.capacity):
            raise ValueError("item sizes must lie in (0, capacity]")

    @classmethod
    def from_json(cls, text: str) -> "BinPackInstance":
        payload = json.loads(text)
        return cls(capacity=float(payload["capacity"]), items=payload["items"])

    def to_json(self) -> str:
        return json.dumps(
            {"capacity": self.capacity, "items": self.items.tolist()},
            sort_keys=True,
        )


def random_instances(
    seed: int,
    n_instances: int = 5,
    n_items: int = 50,
    capacity: float = 100.0,
) -> list:
    """Synthetic instance set; item sizes uniform in [0.1, 0.7] x capacity."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB119]))
    out = []
    for _ in range(n_instances):
        items = rng.uniform(0.1 * capacity, 0.7 * capacity, size=n_items)
        out.append(BinPackInstance(capacity=capacity, items=items))
    return out


def binpack_simulate(ast: expr.Node, instance: BinPackInstance) -> int:
    """Number of bins used when placing items by the priority expression.

    Priorities are only ever evaluated over feasible residuals.  Non-finite
    priorities are treated as minus infinity; if every feasible bin scores
    non-finite the tie rule applies (lowest index).
    """
    residuals: list[float] = []
    for item in instance.items:
        item = float(item)
        feasible = [i for i, r in enumerate(residuals) if r >= item]
        if not feasible:
            residuals.append(instance.capacity - item)
            continue
        ctx = expr.EvalContext(
            {"item": item, "bins": np.array([residuals[i] for i in feasible])}
        )
        priorities = expr.evaluate(ast, ctx)
        priorities = np.where(np.isfinite(priorities), priorities, -np.inf)
        if np.all(np.isneginf(priorities)):
            chosen = feasible[0]
        else:
            chosen = feasible[int(np.argmax(priorities))]
        residuals[chosen] -= item
    return len(residuals)


class BinPackTask(Task):
    family = "binpack"

    def __init__(self, instances: list, seed: int | None = None):
        if not instances:
            raise ValueError("at least one instance is required")
        self.instances = list(instances)
        self.seed = seed
        self.task_id = f"binpack-s{seed}"
        self._probe = self._make_probes(seed or 0)
        self._sig_cache: dict[str, np.ndarray] = {}

    @classmethod
    def random(
        cls,
        seed: int,
        n_instances: int = 5,
        n_items: int = 50,
        capacity: float = 100.0,
    ) -> "BinPackTask":
        return cls(random_instances(seed, n_instances, n_items, capacity), seed)

    def _make_probes(self, seed: int) -> list:
        """Fixed probe scenarios: one item plus feasible residuals each."""
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBEEF]))
        capacity = self.instances[0].capacity
        probes = []
        for _ in range(PROBE_SCENARIOS):
            item = float(rng.uniform(0.0, capacity))
            # Residuals drawn at or above the item size stay feasible.
            residuals = rng.uniform(item, capacity, size=PROBE_BINS)
            probes.append((item, residuals))
        return probes

    def initial_population(self, n: int) -> list:
        genomes = [expr.parse(rule, VARIABLES) for rule in SEED_RULES[:n]]
        if n > len(SEED_RULES):
            rng = np.random.default_rng(
                np.random.SeedSequence([self.seed or 0, 0xF111])
            )
            while len(genomes) < n:
                genomes.append(expr.random_expr(rng, VARIABLES, 3))
        return genomes

    def evaluate(self, genome) -> float:
        unknown = expr.variables_of(genome) - set(VARIABLES)
        if unknown:
            raise InvalidGenomeError(f"unbound variables {sorted(unknown)}")
        counts = [binpack_simulate(genome, inst) for inst in self.instances]
        return -float(np.mean(counts))

    def distance(self, a, b) -> float:
        sa = self._signature(a)
        sb = self._signature(b)
        per_scenario = [
            cosine_behavior_distance(sa[k], sb[k]) for k in range(len(self._probe))
        ]
        return float(np.mean(per_scenario))

    def _signature(self, genome) -> np.ndarray:
        key = self.canonical(genome)
        cached = self._sig_cache.get(key)
        if cached is None:
            rows = []
            for item, residuals in self._probe:
                ctx = expr.EvalContext({"item": item, "bins": residuals})
                out = expr.evaluate(genome, ctx)
                rows.append(np.where(np.isfinite(out), out, 0.0))
            cached = np.vstack(rows)
            self._sig_cache[key] = cached
        return cached

    def canonical(self, genome) -> str:
        return expr.canonicalize(genome)

    def parse_genome(self, text: str):
        try:
            return expr.parse(text, VARIABLES)
        except expr.ExprError as exc:
            raise InvalidGenomeError(str(exc)) from exc

    @property
    def invalid_fitness(self) -> float:
        # One more than the worst possible bin count, averaged over instances.
        worst = [inst.items.size + 1 for inst in self.instances]
        return -float(np.mean(worst))

    def variables(self):
        return VARIABLES

    # Prompt surface -------------------------------------------------------

    def task_desc(self) -> str:
        return (
            "Online bin packing: items arrive one at a time and must be "
            "placed immediately into a bin of fixed capacity. A priority "
            "expression over the current item size (item) and the residual "
            "capacities of the bins that can still fit it (bins) decides the "
            "placement: the feasible bin with the highest priority wins. "
            "The score is the average number of bins used (lower is better)."
        )

    def question(self) -> str:
        summary = [
            {
                "capacity": inst.capacity,
                "n_items": int(inst.items.size),
                "first_items": np.round(inst.items[:10], 3).tolist(),
            }
            for inst in self.instances
        ]
        return json.dumps({"instances": summary})

    def parent_line(self, canon: str, raw_fitness: float) -> str:
        return json.dumps(
            {"expr": canon, "avg_bins": round(self.display_score(raw_fitness), 4)}
        )

    def prompt_fields(self) -> dict:
        return {"n": len(self.instances)}
