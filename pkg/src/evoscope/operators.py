"""Mutation operators: scripted baselines, the model-backed operator, and
probability mixtures of a strong and a weak operator.

Scripted operators make deterministic local edits of a uniformly chosen
parent, seeded per attempt, so whole runs replay bit-identically:

* ``2opt``     best single 2-opt move on a tour (never lengthens it)
* ``subtree``  best-of-k random subtree replacement on an expression
* ``shuffle``  weak baseline: fresh uniform tour / fresh random expression

The model-backed operator renders a prompt template, sends it through
the gateway, and extracts a genome from the reply; parse failures and
transport failures burn the attempt without retry at this level.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from evoscope import expr
from evoscope.prompts import render_template
from evoscope.tasks.base import InvalidGenomeError, Task
from evoscope.tasks.tsp import tour_length


@dataclass
class OperatorSpec:
    """Declarative operator description, resolved by ``build_operator``."""

    kind: str
    model: Optional[str] = None
    temperature: float = 0.7
    strong: Optional["OperatorSpec"] = None
    weak: Optional["OperatorSpec"] = None
    rho: Optional[float] = None

    VALID_KINDS = ("llm", "scripted-2opt", "scripted-subtree", "scripted-shuffle", "mixed")

    def validate(self) -> None:
        if self.kind not in self.VALID_KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.kind == "llm" and not self.model:
            raise ValueError("llm operators need a model id")
        if self.kind == "mixed":
            if self.strong is None or self.weak is None or self.rho is None:
                raise ValueError("mixed operators need strong, weak, and rho")
            if not 0.0 <= self.rho <= 1.0:
                raise ValueError("rho must lie in [0, 1]")
            self.strong.validate()
            self.weak.validate()

    def label(self) -> str:
        if self.kind == "llm":
            return f"llm-{self.model}"
        if self.kind == "mixed":
            return f"mixed-{self.strong.label()}-{self.weak.label()}-rho{self.rho:g}"
        return self.kind.removeprefix("scripted-")


@dataclass
class MutationRequest:
    """Everything an operator may look at for one attempt."""

    task_id: str
    task_statement: str
    parents: list  # [(canonical genome, raw fitness)], elite members only
    attempt_index: int
    seed: tuple


@dataclass
class MutationOutcome:
    genome: object = None
    tag: str = ""
    error: Optional[str] = None
    exchange_index: Optional[int] = None


class Operator:
    tag = "base"

    def propose(self, req: MutationRequest) -> MutationOutcome:
        raise NotImplementedError


def _attempt_rng(req: MutationRequest) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(req.seed)))


def _pick_parent(req: MutationRequest, task: Task, rng: np.random.Generator):
    canon, _ = req.parents[int(rng.integers(len(req.parents)))]
    return task.parse_genome(canon)


class TwoOptOperator(Operator):
    """Apply the single best 2-opt segment reversal to a chosen parent."""

    tag = "2opt"

    def __init__(self, task: Task):
        if task.family != "tsp":
            raise ValueError("2-opt only applies to tour genomes")
        self.task = task

    def propose(self, req: MutationRequest) -> MutationOutcome:
        rng = _attempt_rng(req)
        tour = _pick_parent(req, self.task, rng)
        child = best_two_opt_move(tour, self.task.instance.dist)
        return MutationOutcome(genome=child, tag=self.tag)


def best_two_opt_move(tour: list, dist: np.ndarray) -> list:
    """Best-improvement 2-opt: reverse the segment with the largest gain.

    Returns the parent unchanged at a 2-opt local optimum, so children
    never come out longer than their parent.  Ties break toward the first
    (i, j) pair in scan order.
    """
    order = np.asarray(tour, dtype=int)
    n = order.size
    succ = np.roll(order, -1)
    # delta(i, j) for 1 <= i < j <= n-1: replace edges (i-1,i) and (j,j+1)
    # with (i-1,j) and (i,j+1); the segment between them flips.
    i_idx, j_idx = np.triu_indices(n, k=1)
    mask = i_idx >= 1
    i_idx, j_idx = i_idx[mask], j_idx[mask]
    a = order[i_idx - 1]
    b = order[i_idx]
    c = order[j_idx]
    d = succ[j_idx]
    delta = dist[a, c] + dist[b, d] - dist[a, b] - dist[c, d]
    best = int(np.argmin(delta))
    if delta[best] >= -1e-12:
        return [int(v) for v in order]
    i, j = int(i_idx[best]), int(j_idx[best])
    child = list(order[:i]) + list(order[i:j + 1][::-1]) + list(order[j + 1:])
    return [int(v) for v in child]


class SubtreeOperator(Operator):
    """Best-of-k subtree replacement on a chosen parent expression."""

    tag = "subtree"

    def __init__(self, task: Task, candidates: int = 16):
        if task.family not in ("symreg", "binpack"):
            raise ValueError("subtree mutation applies to expression genomes")
        self.task = task
        self.candidates = candidates

    def propose(self, req: MutationRequest) -> MutationOutcome:
        rng = _attempt_rng(req)
        parent = _pick_parent(req, self.task, rng)
        positions = expr.node_count(parent)
        best_child = None
        best_fitness = -np.inf
        for _ in range(self.candidates):
            at = int(rng.integers(positions))
            replacement = expr.random_expr(rng, self.task.variables(), 2)
            child = replace_subtree(parent, at, replacement)
            try:
                expr.check_limits(child)
                fitness = self.task.evaluate(child)
            except (expr.ExprLimitError, InvalidGenomeError):
                continue
            if fitness > best_fitness:
                best_fitness = fitness
                best_child = child
        if best_child is None:
            return MutationOutcome(tag=self.tag, error="no-viable-candidate")
        return MutationOutcome(genome=best_child, tag=self.tag)


def replace_subtree(node: expr.Node, index: int, replacement: expr.Node) -> expr.Node:
    """Replace the preorder-``index``-th node of ``node`` with ``replacement``."""
    counter = [0]

    def walk(n):
        if counter[0] == index:
            counter[0] += 1
            return replacement
        counter[0] += 1
        if isinstance(n, (expr.Const, expr.Var)):
            return n
        if isinstance(n, expr.Neg):
            return expr.Neg(walk(n.operand))
        if isinstance(n, expr.Call):
            return expr.Call(n.func, walk(n.arg))
        return expr.BinOp(n.op, walk(n.left), walk(n.right))

    return walk(node)


class ShuffleOperator(Operator):
    """Weak baseline: ignore parent structure entirely."""

    tag = "shuffle"

    def __init__(self, task: Task):
        self.task = task

    def propose(self, req: MutationRequest) -> MutationOutcome:
        rng = _attempt_rng(req)
        if self.task.family == "tsp":
            n = self.task.instance.n
            genome = [int(v) for v in rng.permutation(n)]
        else:
            genome = expr.random_expr(rng, self.task.variables(), 3)
        return MutationOutcome(genome=genome, tag=self.tag)


class LlmOperator(Operator):
    """Prompt the gateway with the elite parents and parse one child."""

    def __init__(self, spec: OperatorSpec, task: Task, gateway):
        if gateway is None:
            raise ValueError("llm operators need a gateway")
        self.spec = spec
        self.task = task
        self.gateway = gateway
        self.tag = spec.label()

    def propose(self, req: MutationRequest) -> MutationOutcome:
        from evoscope.gateway import TransportError

        parents_text = "\n".join(
            self.task.parent_line(canon, fitness) for canon, fitness in req.parents
        )
        system, user = render_template(
            self.task.template_name("evolution"),
            task_desc=self.task.task_desc(),
            question=self.task.question(),
            parents=parents_text,
            num_parents=len(req.parents),
            **self.task.prompt_fields(),
        )
        try:
            exchange = self.gateway.chat(
                model=self.spec.model,
                system=system,
                user=user,
                temperature=self.spec.temperature,
            )
        except TransportError:
            return MutationOutcome(
                tag=self.tag,
                error="transport-error",
                exchange_index=self.gateway.last_index(),
            )
        try:
            genome = extract_genome(exchange.reply, self.task)
        except InvalidGenomeError as exc:
            return MutationOutcome(
                tag=self.tag,
                error=f"parse-failure: {exc}",
                exchange_index=exchange.index,
            )
        return MutationOutcome(genome=genome, tag=self.tag, exchange_index=exchange.index)


class MixedOperator(Operator):
    """Fire the weak operator with probability rho, the strong otherwise."""

    def __init__(self, spec: OperatorSpec, strong: Operator, weak: Operator):
        self.spec = spec
        self.strong = strong
        self.weak = weak
        self.rho = float(spec.rho)
        self.tag = spec.label()

    def propose(self, req: MutationRequest) -> MutationOutcome:
        coin = np.random.default_rng(np.random.SeedSequence([*req.seed, 0xC011]))
        if coin.random() < self.rho:
            return self.weak.propose(req)
        return self.strong.propose(req)


def build_operator(spec: OperatorSpec, task: Task, gateway=None) -> Operator:
    spec.validate()
    if spec.kind == "scripted-2opt":
        return TwoOptOperator(task)
    if spec.kind == "scripted-subtree":
        return SubtreeOperator(task)
    if spec.kind == "scripted-shuffle":
        return ShuffleOperator(task)
    if spec.kind == "llm":
        return LlmOperator(spec, task, gateway)
    strong = build_operator(spec.strong, task, gateway)
    weak = build_operator(spec.weak, task, gateway)
    return MixedOperator(spec, strong, weak)


def mutate(spec: OperatorSpec, req: MutationRequest, task: Task, gateway=None) -> MutationOutcome:
    """One-shot convenience wrapper around ``build_operator``."""
    return build_operator(spec, task, gateway).propose(req)


# ---------------------------------------------------------------------------
# Reply parsing

_BRACKET_LIST_RE = re.compile(r"\[\s*-?\d+(?:\s*,\s*-?\d+)*\s*\]")
_FENCE_RE = re.compile(r"```(?:[A-Za-z0-9_+-]*\n)?(.*?)```", re.DOTALL)
_JSON_OBJECT_RE = re.compile(r"\{[^{}]*\}", re.DOTALL)


def extract_genome(text: str, task: Task):
    """Pull a genome for ``task`` out of free-form reply text.

    Tour replies may carry a ``{"genome": ...}`` JSON object or a bare
    bracketed city list; expression replies may arrive fenced, wrapped in
    a function definition, or using Python spellings (``**``, ``np.``).
    Raises InvalidGenomeError when nothing parseable is present.
    """
    if not text or not text.strip():
        raise InvalidGenomeError("empty reply")
    if task.family == "tsp":
        return _extract_tour(text, task)
    return _extract_expression(text, task)


def _extract_tour(text: str, task: Task):
    for match in _JSON_OBJECT_RE.finditer(text):
        try:
            payload = json.loads(match.group())
        except json.JSONDecodeError:
            continue
        if isinstance(payload, dict) and "genome" in payload:
            value = payload["genome"]
            if isinstance(value, str):
                return task.parse_genome(value)
            return task.parse_genome(json.dumps(value))
    m = _BRACKET_LIST_RE.search(text)
    if m:
        return task.parse_genome(m.group())
    raise InvalidGenomeError("no city list found in reply")


def _extract_expression(text: str, task: Task):
    fenced = _FENCE_RE.search(text)
    body = fenced.group(1) if fenced else text
    lines = [
        line
        for line in body.splitlines()
        if line.strip() and not line.strip().startswith(("def ", "import ", "#"))
    ]
    candidate = "\n".join(lines)
    if "return" in candidate:
        candidate = candidate.split("return", 1)[1]
    candidate = candidate.strip().strip(";").strip()
    candidate = candidate.replace("np.", "").replace("math.", "")
    candidate = candidate.replace("**", "^")
    if not candidate:
        raise InvalidGenomeError("no expression found in reply")
    return task.parse_genome(candidate)
