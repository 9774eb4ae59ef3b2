"""Chat gateway: one retrying client, a ledger of every exchange, and the
zero-shot / cost utilities built on top of it.

Requests use the chat-completions wire shape.  Transient failures
(transport errors, HTTP 5xx, 429) are retried up to three times with
exponential backoff; every attempt sequence ends up in the ledger even
when it ultimately fails, so cost accounting and budget checks see the
complete picture.  A scripted mock backend stands in for the network in
tests and offline runs.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from evoscope.prompts import render_template
from evoscope.tasks.base import InvalidGenomeError, Task

ENV_URL = "EVOSCOPE_LLM_URL"
ENV_KEY = "EVOSCOPE_LLM_KEY"

MAX_RETRIES = 3
BACKOFF_SECONDS = (1.0, 2.0, 4.0)
DEFAULT_MAX_TOKENS = 2048
DEFAULT_IN_FLIGHT = 4

ZERO_SHOT_TEMPERATURES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
ZERO_SHOT_SAMPLES_PER_TEMPERATURE = 2


class TransportError(RuntimeError):
    """Request failed after exhausting retries."""


class ConfigurationError(RuntimeError):
    """Gateway cannot be built from the given settings/environment."""


class _RetryableFailure(RuntimeError):
    """Internal: transient backend failure eligible for retry."""


def estimate_tokens(text: str) -> int:
    """ceil(len/4): the stand-in when the backend reports no usage."""
    return math.ceil(len(text) / 4)


@dataclass
class BackendReply:
    text: str
    prompt_tokens: Optional[int] = None
    completion_tokens: Optional[int] = None


@dataclass
class ChatExchange:
    """One logical chat call, after retries resolved."""

    index: int
    model: str
    system: str
    user: str
    temperature: float
    reply: str
    prompt_tokens: int
    completion_tokens: int
    latency_ms: int
    attempts: int
    estimated_tokens: bool
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "model": self.model,
            "temperature": self.temperature,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "latency_ms": self.latency_ms,
            "attempts": self.attempts,
            "estimated_tokens": self.estimated_tokens,
            "error": self.error,
        }


class MockBackend:
    """Deterministic scripted backend.

    Replies are consumed in order and cycle once exhausted.  Entries may
    script failures via a ``status`` of 429/5xx.
    """

    def __init__(self, replies: list):
        if not replies:
            raise ConfigurationError("mock backend needs at least one reply")
        self.replies = list(replies)
        self.cursor = 0
        self.calls = 0

    @classmethod
    def from_jsonl(cls, path: str) -> "MockBackend":
        replies = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    replies.append(json.loads(line))
        return cls(replies)

    def send(self, model: str, system: str, user: str, temperature: float,
             max_tokens: int) -> BackendReply:
        entry = self.replies[self.cursor % len(self.replies)]
        self.cursor += 1
        self.calls += 1
        status = int(entry.get("status", 200))
        if status == 429 or status >= 500:
            raise _RetryableFailure(f"scripted status {status}")
        if status >= 400:
            raise TransportError(f"scripted status {status}")
        return BackendReply(
            text=entry.get("reply", ""),
            prompt_tokens=entry.get("prompt_tokens"),
            completion_tokens=entry.get("completion_tokens"),
        )


class HttpBackend:
    """POSTs chat-completions JSON to the configured endpoint."""

    def __init__(self, url: Optional[str] = None, api_key: Optional[str] = None,
                 timeout: float = 120.0):
        self.url = url or os.environ.get(ENV_URL)
        self.api_key = api_key or os.environ.get(ENV_KEY)
        if not self.url:
            raise ConfigurationError(
                f"no endpoint configured; set {ENV_URL} or pass url="
            )
        self.timeout = timeout
        self._client = None

    def _ensure_client(self):
        if self._client is None:
            import httpx

            headers = {}
            if self.api_key:
                headers["Authorization"] = f"Bearer {self.api_key}"
            self._client = httpx.Client(headers=headers, timeout=self.timeout)
        return self._client

    def send(self, model: str, system: str, user: str, temperature: float,
             max_tokens: int) -> BackendReply:
        import httpx

        payload = {
            "model": model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        try:
            response = self._ensure_client().post(self.url, json=payload)
        except httpx.HTTPError as exc:
            raise _RetryableFailure(f"transport failure: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise _RetryableFailure(f"status {response.status_code}")
        if response.status_code >= 400:
            raise TransportError(
                f"status {response.status_code}: {response.text[:200]}"
            )
        try:
            body = response.json()
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise _RetryableFailure(f"malformed response body: {exc}") from exc
        usage = body.get("usage") or {}
        return BackendReply(
            text=text,
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
        )


class Gateway:
    """Retrying chat client with a complete exchange ledger."""

    def __init__(
        self,
        backend,
        max_retries: int = MAX_RETRIES,
        backoff: tuple = BACKOFF_SECONDS,
        sleep: Callable[[float], None] = time.sleep,
        max_in_flight: int = DEFAULT_IN_FLIGHT,
    ):
        self.backend = backend
        self.max_retries = max_retries
        self.backoff = backoff
        self.sleep = sleep
        self.max_in_flight = max_in_flight
        self.ledger: list = []
        self._lock = threading.Lock()
        self._semaphores: dict[str, threading.Semaphore] = {}

    def _semaphore(self, model: str) -> threading.Semaphore:
        with self._lock:
            if model not in self._semaphores:
                self._semaphores[model] = threading.Semaphore(self.max_in_flight)
            return self._semaphores[model]

    def chat(self, model: str, system: str, user: str, temperature: float = 0.7,
             max_tokens: int = DEFAULT_MAX_TOKENS) -> ChatExchange:
        """One logical call; retries happen inside. Raises TransportError
        after the final retry, still recording the failed exchange."""
        started = time.monotonic()
        attempts = 0
        failure: Optional[str] = None
        reply: Optional[BackendReply] = None
        with self._semaphore(model):
            for round_index in range(1 + self.max_retries):
                attempts += 1
                try:
                    reply = self.backend.send(model, system, user, temperature, max_tokens)
                    failure = None
                    break
                except _RetryableFailure as exc:
                    failure = str(exc)
                    if round_index < self.max_retries:
                        self.sleep(self.backoff[min(round_index, len(self.backoff) - 1)])
                except TransportError as exc:
                    failure = str(exc)
                    break
        latency_ms = int((time.monotonic() - started) * 1000)

        if reply is None:
            exchange = self._record(
                model, system, user, temperature, "", None, None,
                latency_ms, attempts, error=failure or "transport-error",
            )
            raise TransportError(failure or "transport-error")
        return self._record(
            model, system, user, temperature, reply.text,
            reply.prompt_tokens, reply.completion_tokens, latency_ms, attempts,
        )

    def _record(self, model, system, user, temperature, text, prompt_tokens,
                completion_tokens, latency_ms, attempts, error=None) -> ChatExchange:
        estimated = prompt_tokens is None or completion_tokens is None
        if prompt_tokens is None:
            prompt_tokens = estimate_tokens(system) + estimate_tokens(user)
        if completion_tokens is None:
            completion_tokens = estimate_tokens(text)
        with self._lock:
            exchange = ChatExchange(
                index=len(self.ledger),
                model=model,
                system=system,
                user=user,
                temperature=temperature,
                reply=text,
                prompt_tokens=int(prompt_tokens),
                completion_tokens=int(completion_tokens),
                latency_ms=latency_ms,
                attempts=attempts,
                estimated_tokens=estimated,
                error=error,
            )
            self.ledger.append(exchange)
        return exchange

    def last_index(self) -> Optional[int]:
        with self._lock:
            return self.ledger[-1].index if self.ledger else None


# ---------------------------------------------------------------------------
# Zero-shot probing

@dataclass
class ZeroShotSample:
    temperature: float
    sample: int
    fitness: float
    valid: bool
    canon: str = ""
    error: Optional[str] = None


@dataclass
class ZeroShotReport:
    task_id: str
    model: str
    best_fitness: float
    all_invalid: bool
    calls: int
    samples: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "model": self.model,
            "best_fitness": self.best_fitness,
            "all_invalid": self.all_invalid,
            "calls": self.calls,
            "samples": [
                {
                    "temperature": s.temperature,
                    "sample": s.sample,
                    "fitness": s.fitness,
                    "valid": s.valid,
                    "canon": s.canon,
                    "error": s.error,
                }
                for s in self.samples
            ],
        }


def zero_shot_best_of_n(task: Task, model: str, gateway: Gateway) -> ZeroShotReport:
    """Best-of-N probe: two samples at each of six temperatures (12 calls)."""
    from evoscope.operators import extract_genome

    system, user = render_template(
        task.template_name("zeroshot"),
        task_desc=task.task_desc(),
        question=task.question(),
        **task.prompt_fields(),
    )
    samples = []
    calls = 0
    for temperature in ZERO_SHOT_TEMPERATURES:
        for k in range(ZERO_SHOT_SAMPLES_PER_TEMPERATURE):
            calls += 1
            try:
                exchange = gateway.chat(model, system, user, temperature)
            except TransportError as exc:
                samples.append(ZeroShotSample(
                    temperature, k, task.invalid_fitness, False,
                    error=f"transport-error: {exc}",
                ))
                continue
            try:
                genome = extract_genome(exchange.reply, task)
                fitness = task.evaluate(genome)
                samples.append(ZeroShotSample(
                    temperature, k, fitness, True, canon=task.canonical(genome)
                ))
            except InvalidGenomeError as exc:
                samples.append(ZeroShotSample(
                    temperature, k, task.invalid_fitness, False,
                    error=f"parse-failure: {exc}",
                ))
    valid_fitness = [s.fitness for s in samples if s.valid]
    all_invalid = not valid_fitness
    best = max(valid_fitness) if valid_fitness else task.invalid_fitness
    return ZeroShotReport(
        task_id=task.task_id,
        model=model,
        best_fitness=best,
        all_invalid=all_invalid,
        calls=calls,
        samples=samples,
    )


# ---------------------------------------------------------------------------
# Cost accounting

@dataclass
class CostLine:
    model: str
    calls: int
    prompt_tokens: int
    completion_tokens: int
    cost: Optional[float]
    priced: bool


@dataclass
class CostReport:
    total_cost: float
    lines: list
    unpriced_models: list

    def to_dict(self) -> dict:
        return {
            "total_cost": self.total_cost,
            "lines": [
                {
                    "model": l.model,
                    "calls": l.calls,
                    "prompt_tokens": l.prompt_tokens,
                    "completion_tokens": l.completion_tokens,
                    "cost": l.cost,
                    "priced": l.priced,
                }
                for l in self.lines
            ],
            "unpriced_models": self.unpriced_models,
        }


def load_price_table(path: str) -> dict:
    """JSON mapping model -> {"input": usd_per_mtok, "output": usd_per_mtok}."""
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def cost_report(exchanges: list, prices: dict) -> CostReport:
    """Aggregate ledger rows into per-model cost lines.

    Cost is sum(prompt_tokens * input + completion_tokens * output) / 1e6.
    Models without a price entry appear as explicit unpriced lines and do
    not contribute to the total.
    """
    by_model: dict[str, list] = {}
    for ex in exchanges:
        by_model.setdefault(ex["model"] if isinstance(ex, dict) else ex.model, []).append(ex)
    lines = []
    unpriced = []
    total = 0.0
    for model in sorted(by_model):
        rows = by_model[model]
        prompt = sum(r["prompt_tokens"] if isinstance(r, dict) else r.prompt_tokens for r in rows)
        completion = sum(
            r["completion_tokens"] if isinstance(r, dict) else r.completion_tokens for r in rows
        )
        entry = prices.get(model)
        if entry is None:
            lines.append(CostLine(model, len(rows), prompt, completion, None, False))
            unpriced.append(model)
            continue
        cost = (prompt * float(entry["input"]) + completion * float(entry["output"])) / 1e6
        total += cost
        lines.append(CostLine(model, len(rows), prompt, completion, cost, True))
    return CostReport(total_cost=total, lines=lines, unpriced_models=unpriced)
