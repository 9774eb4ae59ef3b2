"""Common task surface consumed by the evolution loop and the operators.

A task owns one problem instance, scores genomes (raw fitness is always
oriented so higher is better), measures genotype/behaviour distance, and
serialises genomes to a canonical string that parses back losslessly.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, Sequence

import numpy as np


class InvalidGenomeError(Exception):
    """Genome outside the task's search space."""


def cosine_behavior_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cosine similarity between behaviour vectors.

    Degenerate norms follow a fixed convention: both zero -> 0 (identical
    null behaviour), exactly one zero -> 1 (maximally dissimilar).
    """
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 and nv == 0.0:
        return 0.0
    if nu == 0.0 or nv == 0.0:
        return 1.0
    return 1.0 - float(np.dot(u, v) / (nu * nv))


class Task(ABC):
    """One problem instance plus the genome algebra around it."""

    family: str
    task_id: str

    @abstractmethod
    def initial_population(self, n: int) -> list:
        """``n`` valid genomes, fixed by the task seed."""

    @abstractmethod
    def evaluate(self, genome: Any) -> float:
        """Raw fitness (higher is better). Raises InvalidGenomeError."""

    @abstractmethod
    def distance(self, a: Any, b: Any) -> float:
        """Task distance in [0, 2]: 0 iff behaviourally/structurally equal."""

    @abstractmethod
    def canonical(self, genome: Any) -> str:
        """Canonical serialization; the dedup key and the persisted form."""

    @abstractmethod
    def parse_genome(self, text: str) -> Any:
        """Inverse of ``canonical`` (accepts operator output as well)."""

    @property
    @abstractmethod
    def invalid_fitness(self) -> float:
        """Raw-fitness sentinel recorded for invalid attempts."""

    def display_score(self, raw_fitness: float) -> float:
        """Score as shown to operators (lower is better for every family)."""
        return -raw_fitness

    # Prompt surface -------------------------------------------------------

    @abstractmethod
    def task_desc(self) -> str:
        """One-paragraph description used by prompt templates."""

    @abstractmethod
    def question(self) -> str:
        """Instance data rendered for prompt templates."""

    @abstractmethod
    def parent_line(self, canon: str, raw_fitness: float) -> str:
        """One parent rendered as a JSON line for the evolution prompt."""

    def template_name(self, mode: str) -> str:
        """Prompt template basename for ``mode`` in {"evolution", "zeroshot"}."""
        return f"{self.family}_{mode}.txt"

    def prompt_fields(self) -> dict:
        """Extra placeholder values for templates (e.g. {n} for tours)."""
        return {}

    def variables(self) -> Sequence[str]:
        """Expression variables, for expression-genome families."""
        return ()
