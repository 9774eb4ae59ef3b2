"""Trajectory descriptors.

Four families of numbers get computed from a finished run: novelty of
each attempt relative to everything seen before it, breakthrough events
against the running best, refinement and step-size statistics relative
to prompted parents, and kernel-density entropies of the population.
All of them are pure functions of the trajectory, so persisted runs
reproduce the online values exactly.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from evoscope.evolution import Trajectory, replay_pools
from evoscope.tasks import Task

NOVELTY_EPS = 1e-9
ENTROPY_FALLBACK_BANDWIDTH = 1.0


class UndefinedEntropyError(ValueError):
    """All kernel weights are zero; the density has no mass."""


@dataclass
class NoveltyRecord:
    individual_id: int
    raw: float
    normalized: float


@dataclass
class BreakthroughReport:
    event_ids: list
    rate: float


@dataclass
class GenerationSummary:
    """Per-generation statistics feeding the regression pipeline."""

    generation: int
    mean_novelty: float
    max_novelty: float
    h_spatial: float
    h_fitness: float
    bandwidth: float
    breakthrough_count: int
    offspring_attempts: int
    valid_attempts: int
    best_so_far: float

    @property
    def prob_breakthrough(self) -> float:
        if self.offspring_attempts == 0:
            return 0.0
        return self.breakthrough_count / self.offspring_attempts

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "mean_novelty": self.mean_novelty,
            "max_novelty": self.max_novelty,
            "h_spatial": self.h_spatial,
            "h_fitness": self.h_fitness,
            "bandwidth": self.bandwidth,
            "breakthrough_count": self.breakthrough_count,
            "offspring_attempts": self.offspring_attempts,
            "valid_attempts": self.valid_attempts,
            "best_so_far": self.best_so_far,
            "prob_breakthrough": self.prob_breakthrough,
        }


def _genome_map(traj: Trajectory, task: Task) -> dict:
    """id -> genome for valid records, re-parsing canon when needed."""
    out = {}
    for rec in traj.records:
        if not rec.valid:
            continue
        genome = rec.genome
        if genome is None:
            genome = task.parse_genome(rec.canon)
        out[rec.id] = genome
    return out


def novelty(candidate, priors: list, task: Task) -> float:
    """Minimum task distance from the candidate to any prior genome."""
    if not priors:
        raise ValueError("novelty needs a non-empty prior set")
    return min(task.distance(candidate, p) for p in priors)


def normalize_novelty(raws: list) -> list:
    """Min-max per problem instance with an epsilon guard.

    Constant inputs (and singletons) map to 0; nothing reaches 1 exactly.
    """
    if not raws:
        return []
    lo = min(raws)
    hi = max(raws)
    return [(r - lo) / (hi - lo + NOVELTY_EPS) for r in raws]


def novelty_records(traj: Trajectory, task: Task) -> list:
    """Novelty for every valid offspring attempt, in attempt order.

    The prior set for attempt i is every valid attempt with a smaller id,
    initial population included.  Initial individuals themselves are not
    scored; invalid attempts are neither scored nor ever priors.
    """
    genomes = _genome_map(traj, task)
    prior_ids: list = []
    raws = []
    ids = []
    for rec in traj.records:
        if not rec.valid:
            continue
        if rec.generation > 0:
            ids.append(rec.id)
            raws.append(
                novelty(genomes[rec.id], [genomes[p] for p in prior_ids], task)
            )
        prior_ids.append(rec.id)
    normalized = normalize_novelty(raws)
    return [
        NoveltyRecord(individual_id=i, raw=r, normalized=n)
        for i, r, n in zip(ids, raws, normalized)
    ]


def breakthroughs(traj: Trajectory, valid_only_denominator: bool = False) -> BreakthroughReport:
    """Strict best-so-far improvement events among valid offspring.

    The running best starts at the initial population's best and only
    valid attempts can beat it; the rate divides by every offspring
    attempt (invalid included) unless valid_only_denominator is set.
    """
    best = -math.inf
    for rec in traj.records:
        if rec.generation == 0 and rec.valid:
            best = max(best, rec.raw_fitness)
    events = []
    attempts = 0
    valid_attempts = 0
    for rec in traj.records:
        if rec.generation == 0:
            continue
        attempts += 1
        if not rec.valid:
            continue
        valid_attempts += 1
        if rec.raw_fitness > best:
            events.append(rec.id)
            best = rec.raw_fitness
    denom = valid_attempts if valid_only_denominator else attempts
    rate = len(events) / denom if denom else 0.0
    return BreakthroughReport(event_ids=events, rate=rate)


def local_refinement_rate(traj: Trajectory) -> float:
    """Fraction of valid offspring strictly beating their best prompted parent."""
    by_id = traj.by_id()
    refined = 0
    valid = 0
    for rec in traj.offspring():
        if not rec.valid:
            continue
        valid += 1
        parent_best = max(by_id[p].raw_fitness for p in rec.parent_ids)
        if rec.raw_fitness > parent_best:
            refined += 1
    return refined / valid if valid else 0.0


def parent_child_distance(traj: Trajectory, task: Task) -> float:
    """Mean semantic step size from prompted parents to valid offspring."""
    genomes = _genome_map(traj, task)
    per_child = []
    for rec in traj.offspring():
        if not rec.valid:
            continue
        dists = [task.distance(genomes[rec.id], genomes[p]) for p in rec.parent_ids]
        per_child.append(sum(dists) / len(dists))
    return sum(per_child) / len(per_child) if per_child else 0.0


def median_bandwidth(dist: np.ndarray) -> float:
    """Median of the positive pairwise distances; 1.0 when there are none."""
    n = dist.shape[0]
    if n < 2:
        return ENTROPY_FALLBACK_BANDWIDTH
    iu = np.triu_indices(n, k=1)
    positive = dist[iu][dist[iu] > 0.0]
    if positive.size == 0:
        return ENTROPY_FALLBACK_BANDWIDTH
    return float(np.median(positive))


def spatial_entropy(dist: np.ndarray, weights, bandwidth: float) -> float:
    """Entropy of the kernel-smoothed density over members.

    g_i = sum_j w_j exp(-D_ij^2 / (2 sigma^2)), q = g / sum(g),
    H = -sum q_i log q_i.  Uniform weights give the spatial variant,
    fitness weights the concentration variant.
    """
    w = np.asarray(weights, dtype=float)
    if np.all(w == 0.0):
        raise UndefinedEntropyError("entropy weights are identically zero")
    if bandwidth <= 0.0:
        raise ValueError("bandwidth must be positive")
    kernel = np.exp(-(dist / bandwidth) ** 2 / 2.0)
    g = kernel @ w
    q = g / g.sum()
    mask = q > 0.0
    return float(-(q[mask] * np.log(q[mask])).sum())


def fitness_weights(fitnesses) -> np.ndarray:
    """Min-max weights with an epsilon floor so no member vanishes.

    Equal fitness everywhere degenerates to uniform weights, making the
    fitness entropy coincide with the spatial one.
    """
    f = np.asarray(fitnesses, dtype=float)
    lo = f.min()
    span = f.max() - lo
    return (f - lo + NOVELTY_EPS) / (span + NOVELTY_EPS)


def _pool_distance_matrix(members, genomes: dict, task: Task) -> np.ndarray:
    n = len(members)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = task.distance(genomes[members[i].id], genomes[members[j].id])
            dist[i, j] = dist[j, i] = d
    return dist


def generation_summaries(traj: Trajectory, task: Task) -> list:
    """One row per offspring generation, on the end-of-generation pool.

    Novelty columns summarize that generation's valid offspring
    (normalized values); entropies describe the pool after the merge.
    """
    genomes = _genome_map(traj, task)
    nov_by_id = {r.individual_id: r.normalized for r in novelty_records(traj, task)}
    events = set(breakthroughs(traj).event_ids)
    pools = replay_pools(traj)
    by_gen: dict[int, list] = {}
    for rec in traj.offspring():
        by_gen.setdefault(rec.generation, []).append(rec)

    summaries = []
    for gen in sorted(by_gen):
        recs = by_gen[gen]
        valid = [r for r in recs if r.valid]
        novs = [nov_by_id[r.id] for r in valid if r.id in nov_by_id]
        pool = pools[gen]
        dist = _pool_distance_matrix(pool.members, genomes, task)
        sigma = median_bandwidth(dist)
        h_spatial = spatial_entropy(dist, np.ones(len(pool.members)), sigma)
        h_fitness = spatial_entropy(
            dist, fitness_weights([m.raw_fitness for m in pool.members]), sigma
        )
        summaries.append(GenerationSummary(
            generation=gen,
            mean_novelty=sum(novs) / len(novs) if novs else 0.0,
            max_novelty=max(novs) if novs else 0.0,
            h_spatial=h_spatial,
            h_fitness=h_fitness,
            bandwidth=sigma,
            breakthrough_count=sum(1 for r in recs if r.id in events),
            offspring_attempts=len(recs),
            valid_attempts=len(valid),
            best_so_far=pool.best_so_far,
        ))
    return summaries


@dataclass
class RunDescriptors:
    """Whole-run scalars used as regression rows."""

    run_id: str
    task_id: str
    operator_id: str
    seed: int
    avg_novelty: float
    initial_novelty: float
    breakthrough_rate: float
    lrr: float
    pcd: float
    best_final_fitness: float
    offspring_attempts: int
    valid_attempts: int

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "task_id": self.task_id,
            "operator_id": self.operator_id,
            "seed": self.seed,
            "avg_novelty": self.avg_novelty,
            "initial_novelty": self.initial_novelty,
            "breakthrough_rate": self.breakthrough_rate,
            "lrr": self.lrr,
            "pcd": self.pcd,
            "best_final_fitness": self.best_final_fitness,
            "offspring_attempts": self.offspring_attempts,
            "valid_attempts": self.valid_attempts,
        }


def run_descriptors(traj: Trajectory, task: Task) -> RunDescriptors:
    """Collapse a trajectory into the per-run regression row.

    initial_novelty averages the first offspring generation only: how far
    the operator jumps from the seed population before any adaptation.
    """
    records = novelty_records(traj, task)
    first_gen_ids = {
        r.id for r in traj.offspring() if r.generation == 1 and r.valid
    }
    firsts = [r.normalized for r in records if r.individual_id in first_gen_ids]
    offspring = traj.offspring()
    valid = [r for r in offspring if r.valid]
    best_final = -math.inf
    for rec in traj.records:
        if rec.valid:
            best_final = max(best_final, rec.raw_fitness)
    return RunDescriptors(
        run_id=traj.run_id,
        task_id=traj.task_id,
        operator_id=traj.operator_id,
        seed=traj.config.seed,
        avg_novelty=(
            sum(r.normalized for r in records) / len(records) if records else 0.0
        ),
        initial_novelty=sum(firsts) / len(firsts) if firsts else 0.0,
        breakthrough_rate=breakthroughs(traj).rate,
        lrr=local_refinement_rate(traj),
        pcd=parent_child_distance(traj, task),
        best_final_fitness=best_final,
        offspring_attempts=len(offspring),
        valid_attempts=len(valid),
    )
