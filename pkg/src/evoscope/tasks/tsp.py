"""Tour-finding task: minimise closed tour length over a distance matrix.

Genomes are permutations of range(n).  Raw fitness is the negated tour
length, so higher is better everywhere in the loop.  Distance between
tours is one minus the fraction of shared undirected edges, which makes
it invariant under rotation and direction reversal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from evoscope.tasks.base import InvalidGenomeError, Task


@dataclass
class TspInstance:
    """Symmetric nonnegative distance matrix with a zero diagonal.

    The triangle inequality is not assumed anywhere downstream.
    """

    n: int
    dist: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.dist = np.asarray(self.dist, dtype=float)
        if self.dist.shape != (self.n, self.n):
            raise ValueError(f"distance matrix must be {self.n}x{self.n}")
        if self.n < 3:
            raise ValueError("instances need at least 3 cities")
        if not np.allclose(self.dist, self.dist.T):
            raise ValueError("distance matrix must be symmetric")
        if np.any(self.dist < 0):
            raise ValueError("distances must be nonnegative")
        if np.any(np.diag(self.dist) != 0):
            raise ValueError("diagonal must be zero")

    @classmethod
    def random(cls, n: int, seed: int) -> "TspInstance":
        """Euclidean distances between points drawn uniformly in the unit square."""
        rng = np.random.default_rng(np.random.SeedSequence([seed, n, 0x7519]))
        points = rng.uniform(0.0, 1.0, size=(n, 2))
        delta = points[:, None, :] - points[None, :, :]
        dist = np.sqrt((delta ** 2).sum(axis=2))
        np.fill_diagonal(dist, 0.0)
        return cls(n=n, dist=dist, seed=seed)

    @classmethod
    def from_json(cls, text: str) -> "TspInstance":
        payload = json.loads(text)
        dist = np.asarray(payload["dist"], dtype=float)
        return cls(n=int(payload["n"]), dist=dist, seed=payload.get("seed"))

    def to_json(self) -> str:
        return json.dumps(
            {"n": self.n, "dist": self.dist.tolist(), "seed": self.seed},
            sort_keys=True,
        )


def tour_length(order: list, dist: np.ndarray) -> float:
    """Closed tour length including the edge back to the start."""
    idx = np.asarray(order, dtype=int)
    return float(dist[idx, np.roll(idx, -1)].sum())


def canonical_tour(order: list) -> list:
    """Rotate so city 0 leads, then fix direction by the smaller neighbour."""
    idx = list(order)
    start = idx.index(0)
    rotated = idx[start:] + idx[:start]
    if len(rotated) > 2 and rotated[1] > rotated[-1]:
        rotated = [rotated[0]] + rotated[:0:-1]
    return rotated


def tour_edges(order: list) -> frozenset:
    n = len(order)
    return frozenset(
        (min(order[i], order[(i + 1) % n]), max(order[i], order[(i + 1) % n]))
        for i in range(n)
    )


class TspTask(Task):
    family = "tsp"

    def __init__(self, instance: TspInstance):
        self.instance = instance
        self.task_id = f"tsp{instance.n}-s{instance.seed}"
        self._edge_cache: dict[str, frozenset] = {}

    @classmethod
    def random(cls, n: int, seed: int) -> "TspTask":
        return cls(TspInstance.random(n, seed))

    def initial_population(self, n: int) -> list:
        rng = np.random.default_rng(
            np.random.SeedSequence([self.instance.seed or 0, 0x1217])
        )
        return [list(map(int, rng.permutation(self.instance.n))) for _ in range(n)]

    def evaluate(self, genome) -> float:
        self._validate(genome)
        return -tour_length(genome, self.instance.dist)

    def _validate(self, genome) -> None:
        n = self.instance.n
        try:
            values = [int(v) for v in genome]
        except (TypeError, ValueError) as exc:
            raise InvalidGenomeError(f"not a city sequence: {exc}") from exc
        if len(values) != n or sorted(values) != list(range(n)):
            raise InvalidGenomeError(
                f"genome must be a permutation of 0..{n - 1}"
            )

    def distance(self, a, b) -> float:
        ea = self._edges(a)
        eb = self._edges(b)
        return 1.0 - len(ea & eb) / len(ea)

    def _edges(self, genome) -> frozenset:
        key = self.canonical(genome)
        cached = self._edge_cache.get(key)
        if cached is None:
            cached = tour_edges(genome)
            self._edge_cache[key] = cached
        return cached

    def canonical(self, genome) -> str:
        return json.dumps(canonical_tour(genome), separators=(",", ":"))

    def parse_genome(self, text: str):
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidGenomeError(f"not a JSON city list: {exc}") from exc
        if not isinstance(payload, list):
            raise InvalidGenomeError("genome must be a JSON list of cities")
        genome = [int(v) for v in payload] if payload else []
        self._validate(genome)
        return genome

    @property
    def invalid_fitness(self) -> float:
        return 0.0

    # Prompt surface -------------------------------------------------------

    def task_desc(self) -> str:
        return (
            "The traveling salesman problem asks for the shortest closed "
            "route that visits every city exactly once and returns to the "
            "start. City-to-city costs are given by the distance matrix "
            "below; the score of a route is its total length (lower is "
            "better)."
        )

    def question(self) -> str:
        rounded = np.round(self.instance.dist, 4).tolist()
        return json.dumps({"n": self.instance.n, "dist": rounded})

    def parent_line(self, canon: str, raw_fitness: float) -> str:
        return json.dumps(
            {"genome": json.loads(canon), "score": round(self.display_score(raw_fitness), 4)}
        )

    def prompt_fields(self) -> dict:
        return {"n": self.instance.n, "n_minus_1": self.instance.n - 1}
