"""Population-based evolutionary loop with full attempt recording.

Each generation samples parents from the elite of the current pool
(fitness-proportional after shifting so the worst elite member keeps an
epsilon of mass), asks the operator for a fixed number of offspring, and
merges the valid ones back under a capacity cap.  Every attempt, valid
or not, lands in the trajectory with a dense attempt index; the pool
itself can be replayed from those records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from evoscope.operators import MutationRequest
from evoscope.tasks.base import InvalidGenomeError, Task

WEIGHT_EPS = 1e-9


class SelectionImpossibleError(RuntimeError):
    """No valid individual is available to act as a parent."""


@dataclass
class Individual:
    """One attempt: genome, score, and lineage bookkeeping.

    ``id`` doubles as the dense attempt index within the run.  Invalid
    attempts keep the task's sentinel fitness and never join the pool.
    """

    id: int
    genome: object
    canon: str
    raw_fitness: float
    generation: int
    parent_ids: tuple = ()
    valid: bool = True
    operator_tag: str = "init"
    error: Optional[str] = None
    exchange_index: Optional[int] = None


@dataclass
class EvolutionConfig:
    n_init: int = 40
    elite_fraction: float = 0.2
    parents_per_prompt: int = 3
    offspring_per_generation: int = 10
    capacity: int = 40
    generations: int = 30
    seed: int = 21

    def validate(self) -> None:
        if not 0.0 < self.elite_fraction <= 1.0:
            raise ValueError("elite_fraction must lie in (0, 1]")
        for name in ("n_init", "parents_per_prompt", "offspring_per_generation",
                     "capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.generations < 0:
            raise ValueError("generations must be nonnegative")
        if self.parents_per_prompt > elite_count(self.elite_fraction, self.capacity):
            raise ValueError(
                "parents_per_prompt exceeds the elite size at capacity"
            )


def elite_count(fraction: float, members: int) -> int:
    """ceil(fraction * members), guarded against float fuzz at integers."""
    return max(1, math.ceil(fraction * members - 1e-9))


def _rank_key(ind: Individual):
    # Higher fitness first; ties break toward the earlier creation id.
    return (-ind.raw_fitness, ind.id)


@dataclass
class PopulationPool:
    """Deduplicated pool of valid individuals, ranked by fitness."""

    capacity: int
    members: list = field(default_factory=list)
    best_so_far: float = -math.inf

    @classmethod
    def from_initial(cls, individuals: Sequence[Individual], capacity: int) -> "PopulationPool":
        pool = cls(capacity=capacity)
        return pool.updated(individuals)

    def updated(self, offspring: Sequence[Individual]) -> "PopulationPool":
        """Merge valid offspring, dedup by canonical form, truncate to capacity."""
        seen = {ind.canon for ind in self.members}
        merged = list(self.members)
        best = self.best_so_far
        for ind in sorted(offspring, key=lambda i: i.id):
            if not ind.valid:
                continue
            best = max(best, ind.raw_fitness)
            if ind.canon in seen:
                continue
            seen.add(ind.canon)
            merged.append(ind)
        merged.sort(key=_rank_key)
        return PopulationPool(
            capacity=self.capacity,
            members=merged[: self.capacity],
            best_so_far=best,
        )

    def elite(self, fraction: float) -> list:
        if not self.members:
            return []
        return self.members[: elite_count(fraction, len(self.members))]

    def canon_set(self) -> set:
        return {ind.canon for ind in self.members}


def select_parents(
    pool: PopulationPool,
    cfg: EvolutionConfig,
    rng: np.random.Generator,
) -> list:
    """Sample parents from the elite, proportionally to shifted fitness.

    Weights are raw_fitness - min(elite fitness) + 1e-9, so the weakest
    elite member keeps a sliver of probability and negative fitness scales
    (tour lengths) never produce negative weights.  Sampling is with
    replacement.
    """
    elite = pool.elite(cfg.elite_fraction)
    if not elite:
        raise SelectionImpossibleError("pool holds no valid members")
    fitness = np.array([ind.raw_fitness for ind in elite])
    weights = fitness - fitness.min() + WEIGHT_EPS
    probs = weights / weights.sum()
    chosen = rng.choice(len(elite), size=cfg.parents_per_prompt, replace=True, p=probs)
    return [elite[int(i)] for i in chosen]


@dataclass
class Trajectory:
    """Complete record of one run, in attempt order."""

    run_id: str
    task_id: str
    operator_id: str
    config: EvolutionConfig
    records: list = field(default_factory=list)

    @property
    def n_init(self) -> int:
        return sum(1 for r in self.records if r.generation == 0)

    def offspring(self) -> list:
        return [r for r in self.records if r.generation > 0]

    def by_id(self) -> dict:
        return {r.id: r for r in self.records}


def run_evolution(cfg: EvolutionConfig, task: Task, operator, run_id: str = "run") -> Trajectory:
    """Execute the full loop and return the trajectory.

    The initial population comes from the task seed (shared across
    operators); selection randomness and per-attempt operator randomness
    derive from cfg.seed, so reruns are bit-identical.
    """
    cfg.validate()
    traj = Trajectory(
        run_id=run_id,
        task_id=task.task_id,
        operator_id=getattr(operator, "tag", "unknown"),
        config=cfg,
    )

    initial = []
    for i, genome in enumerate(task.initial_population(cfg.n_init)):
        initial.append(
            Individual(
                id=i,
                genome=genome,
                canon=task.canonical(genome),
                raw_fitness=task.evaluate(genome),
                generation=0,
            )
        )
    traj.records.extend(initial)
    pool = PopulationPool.from_initial(initial, cfg.capacity)

    selection_rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, 0x5E1E])
    )
    next_id = len(initial)

    for gen in range(1, cfg.generations + 1):
        parents = select_parents(pool, cfg, selection_rng)
        parent_ids = tuple(p.id for p in parents)
        payload = [(p.canon, p.raw_fitness) for p in parents]
        offspring = []
        for a in range(cfg.offspring_per_generation):
            req = MutationRequest(
                task_id=task.task_id,
                task_statement=task.task_desc(),
                parents=payload,
                attempt_index=next_id,
                seed=(cfg.seed, gen, a),
            )
            outcome = operator.propose(req)
            if outcome.genome is None:
                ind = Individual(
                    id=next_id,
                    genome=None,
                    canon="",
                    raw_fitness=task.invalid_fitness,
                    generation=gen,
                    parent_ids=parent_ids,
                    valid=False,
                    operator_tag=outcome.tag,
                    error=outcome.error or "invalid-genome",
                    exchange_index=outcome.exchange_index,
                )
            else:
                try:
                    fitness = task.evaluate(outcome.genome)
                    ind = Individual(
                        id=next_id,
                        genome=outcome.genome,
                        canon=task.canonical(outcome.genome),
                        raw_fitness=fitness,
                        generation=gen,
                        parent_ids=parent_ids,
                        valid=True,
                        operator_tag=outcome.tag,
                        exchange_index=outcome.exchange_index,
                    )
                except InvalidGenomeError as exc:
                    ind = Individual(
                        id=next_id,
                        genome=None,
                        canon="",
                        raw_fitness=task.invalid_fitness,
                        generation=gen,
                        parent_ids=parent_ids,
                        valid=False,
                        operator_tag=outcome.tag,
                        error=f"invalid-genome: {exc}",
                        exchange_index=outcome.exchange_index,
                    )
            traj.records.append(ind)
            offspring.append(ind)
            next_id += 1
        pool = pool.updated(offspring)

    return traj


def replay_pools(traj: Trajectory, capacity: Optional[int] = None) -> list:
    """Pool membership at the end of each generation, rebuilt from records.

    Index 0 is the pool right after the initial population; index t the
    pool after generation t's merge.  Identical to the pools seen online
    because the update rule is deterministic in the records.
    """
    cap = capacity if capacity is not None else traj.config.capacity
    initial = [r for r in traj.records if r.generation == 0]
    pools = [PopulationPool.from_initial(initial, cap)]
    by_gen: dict[int, list] = {}
    for rec in traj.records:
        if rec.generation > 0:
            by_gen.setdefault(rec.generation, []).append(rec)
    for gen in sorted(by_gen):
        pools.append(pools[-1].updated(by_gen[gen]))
    return pools
