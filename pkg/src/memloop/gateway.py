"""Chat-completion access: an HTTP client for OpenAI-compatible endpoints and scripted mocks.

Both gateways share the same surface, ``complete(prompt) -> Completion``, and
enforce a global bound on requests in flight.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import httpx

from .templates import EMPTY_MEMORY, parse_prompt
from .tasks import NEEDLE_RE, VAR_RE, VT_VALUE_RE

logger = logging.getLogger(__name__)

MOCK_BEHAVIORS = ("echo_memory", "perfect_extractor", "k_hop_extractor", "lossy", "fixed_answer", "replay")
DEFAULT_KEY_ENV = "MEMLOOP_API_KEY"


class GatewayError(RuntimeError):
    """A completion could not be obtained (after retries, where applicable)."""

    def __init__(self, message: str, raw_body: str | None = None):
        super().__init__(message)
        self.raw_body = raw_body


@dataclass
class Completion:
    text: str
    token_ids: list[int] | None = None
    logprobs: list[float] | None = None
    latency_ms: float = 0.0


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key_env: str = DEFAULT_KEY_ENV
    max_in_flight: int = 8
    timeout_ms: int = 120_000
    max_attempts: int = 4
    backoff_base_s: float = 1.0
    temperature: float = 0.7
    top_p: float = 1.0
    max_output_tokens: int = 1024
    request_logprobs: bool = True

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    @property
    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) or os.environ.get("OPENAI_API_KEY")


class _InFlight:
    """Concurrency bound plus counters; shared by a gateway and its reseeded siblings."""

    def __init__(self, limit: int):
        self.slots = threading.BoundedSemaphore(limit)
        self.lock = threading.Lock()
        self.now = 0
        self.peak = 0
        self.calls = 0


class Gateway:
    """Shared in-flight accounting and optional JSONL audit log."""

    def __init__(self, max_in_flight: int = 8, audit_path: str | None = None):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.max_in_flight = max_in_flight
        self._acct = _InFlight(max_in_flight)
        self.audit_path = audit_path

    @property
    def in_flight(self) -> int:
        return self._acct.now

    @property
    def peak_in_flight(self) -> int:
        return self._acct.peak

    @property
    def calls(self) -> int:
        return self._acct.calls

    def complete(self, prompt: str) -> Completion:
        acct = self._acct
        with acct.slots:
            with acct.lock:
                acct.now += 1
                acct.calls += 1
                acct.peak = max(acct.peak, acct.now)
            t0 = time.perf_counter()
            try:
                out = self._complete(prompt)
            finally:
                with acct.lock:
                    acct.now -= 1
            out.latency_ms = (time.perf_counter() - t0) * 1000.0
        if self.audit_path:
            self._audit(prompt, out)
        return out

    def _complete(self, prompt: str) -> Completion:
        raise NotImplementedError

    def _audit(self, prompt: str, out: Completion) -> None:
        rec = {"prompt": prompt, "completion": out.text, "latency_ms": out.latency_ms}
        with self._acct.lock, open(self.audit_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


class HttpGateway(Gateway):
    """Client for ``POST {base_url}/chat/completions``; one user message per request."""

    def __init__(self, config: EndpointConfig, audit_path: str | None = None,
                 transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        super().__init__(config.max_in_flight, audit_path)
        self.config = config
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(base_url=config.base_url.rstrip("/"), headers=headers,
                                    timeout=config.timeout_ms / 1000.0, transport=transport)

    def request_body(self, prompt: str) -> dict:
        cfg = self.config
        body = {
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "top_p": cfg.top_p,
            "max_tokens": cfg.max_output_tokens,
        }
        if cfg.request_logprobs:
            body["logprobs"] = True
        return body

    def _complete(self, prompt: str) -> Completion:
        body = self.request_body(prompt)
        last: Exception | None = None
        for attempt in range(self.config.max_attempts):
            if attempt:
                self._sleep(self.config.backoff_base_s * 2 ** (attempt - 1))
            try:
                resp = self._client.post("/chat/completions", json=body)
            except httpx.HTTPError as exc:
                last = exc
                logger.warning("attempt %d/%d failed: %r", attempt + 1, self.config.max_attempts, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = GatewayError(f"HTTP {resp.status_code}", resp.text)
                logger.warning("attempt %d/%d got HTTP %d", attempt + 1, self.config.max_attempts,
                               resp.status_code)
                continue
            if resp.status_code >= 400:
                raise GatewayError(f"HTTP {resp.status_code}", resp.text)
            return parse_chat_response(resp.text)
        raise GatewayError(f"request failed after {self.config.max_attempts} attempts: {last}",
                           getattr(last, "raw_body", None))

    def close(self):
        self._client.close()


def parse_chat_response(raw: str) -> Completion:
    try:
        data = json.loads(raw)
        choice = data["choices"][0]
        text = choice["message"]["content"]
        if not isinstance(text, str):
            raise TypeError("content is not a string")
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise GatewayError(f"malformed chat response: {exc}", raw) from exc
    logprobs = token_ids = None
    lp = choice.get("logprobs") or {}
    content = lp.get("content") if isinstance(lp, dict) else None
    if content:
        logprobs = [float(t["logprob"]) for t in content]
        if all("token_id" in t for t in content):
            token_ids = [int(t["token_id"]) for t in content]
    return Completion(text, token_ids, logprobs)


@dataclass(frozen=True)
class MockScript:
    """Deterministic stand-in model.

    ``perfect_extractor`` copies needle sentences whose key occurs in the
    problem into memory and answers with their values; ``k_hop_extractor``
    additionally follows ``VAR`` assignment chains; ``lossy`` is the
    perfect extractor dropping each new memory line with probability
    ``p_drop``; ``replay`` answers from a prompt -> completion table.
    """

    behavior: str
    seed: int = 0
    p_drop: float = 0.0
    text: str = ""
    table: Mapping[str, str] = field(default_factory=dict)
    latency_s: float = 0.0

    def __post_init__(self):
        if self.behavior not in MOCK_BEHAVIORS:
            raise ValueError(f"unknown mock behavior {self.behavior!r}; choose from {MOCK_BEHAVIORS}")
        if not 0.0 <= self.p_drop <= 1.0:
            raise ValueError("p_drop must lie in [0, 1]")

    @classmethod
    def replaying(cls, traces, seed: int = 0) -> "MockScript":
        table = {}
        for tr in traces:
            for conv in tr.conversations:
                table[conv.prompt] = conv.completion
        return cls("replay", seed=seed, table=table)

    def respond(self, prompt: str) -> str:
        b = self.behavior
        if b == "fixed_answer":
            return self.text
        if b == "replay":
            if prompt not in self.table:
                raise GatewayError("replay mock has no recorded completion for this prompt")
            return self.table[prompt]
        parsed = parse_prompt(prompt)
        if parsed is None:
            raise GatewayError("mock cannot parse prompt", prompt[:200])
        kind, parts = parsed
        if b == "echo_memory":
            return parts["memory"]
        if kind == "answer":
            return _answer_from_memory(parts["prompt"], parts["memory"], chains=(b == "k_hop_extractor"))
        rng = random.Random(_digest(self.seed, prompt)) if b == "lossy" else None
        return _update_memory(parts["prompt"], parts["memory"], parts["chunk"],
                              chains=(b == "k_hop_extractor"), drop=self.p_drop, rng=rng)


class MockGateway(Gateway):
    def __init__(self, script: MockScript, max_in_flight: int = 8, audit_path: str | None = None):
        super().__init__(max_in_flight, audit_path)
        self.script = script

    def with_seed(self, seed: int) -> "MockGateway":
        """A sibling mock with another seed that shares this gateway's in-flight bound."""
        twin = MockGateway.__new__(MockGateway)
        twin.__dict__.update(self.__dict__)
        twin.script = MockScript(**{**self.script.__dict__, "seed": seed})
        return twin

    def _complete(self, prompt: str) -> Completion:
        if self.script.latency_s:
            time.sleep(self.script.latency_s)
        text = self.script.respond(prompt)
        rng = random.Random(_digest(self.script.seed, prompt, text))
        pieces = text.split()
        ids = [int(hashlib.sha256(p.encode()).hexdigest()[:8], 16) % 50_000 for p in pieces]
        logprobs = [-rng.uniform(0.001, 2.0) for _ in pieces]
        return Completion(text, ids, logprobs)


def _digest(*parts) -> int:
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).hexdigest()
    return int(h[:16], 16)


def _memory_lines(memory: str) -> list[str]:
    if memory.strip() == EMPTY_MEMORY:
        return []
    return [ln for ln in memory.splitlines() if ln.strip()]


def _mentions(problem: str, key: str) -> bool:
    return re.search(r"(?<![\w-])" + re.escape(key) + r"(?![\w-])", problem) is not None


# an unfinished needle or assignment at the very end of a chunk
_PARTIAL = re.compile(
    r"(?:One(?: of(?: the(?: special(?: magic(?: numbers(?: for(?: [\w-]+(?: is:(?: [\w-]+)?)?)?)?)?)?)?)?)?"
    r"|VAR(?: [A-Z]+(?: =(?: (?:[A-Z]+|\d+))?)?)?)")
_PARTIAL_TAIL = re.compile(r"(?:^|(?<=\s))(" + _PARTIAL.pattern + r")\s*$")


def _update_memory(problem, memory, chunk, chains=False, drop=0.0, rng=None) -> str:
    lines = _memory_lines(memory)
    # a statement cut by the chunk boundary was parked in memory; glue it back on
    pending = [ln for ln in lines if _PARTIAL.fullmatch(ln)]
    lines = [ln for ln in lines if not _PARTIAL.fullmatch(ln)]
    text = " ".join(pending + [chunk])
    fresh = []
    for m in NEEDLE_RE.finditer(text):
        if _mentions(problem, m.group("key")):
            fresh.append(m.group(0))
    if chains:
        root = VT_VALUE_RE.search(problem)
        if root:
            tracked = {VAR_RE.match(ln).group("name") for ln in lines if VAR_RE.match(ln)}
            for m in VAR_RE.finditer(text):
                if m.group("rhs") == root.group("value") or m.group("rhs") in tracked:
                    tracked.add(m.group("name"))
                    fresh.append(m.group(0))
    for line in fresh:
        if line in lines:
            continue
        if rng is not None and rng.random() < drop:
            continue
        lines.append(line)
    tail = _PARTIAL_TAIL.search(text)
    if tail:
        lines.append(tail.group(1))
    return "\n".join(lines) if lines else memory


def _answer_from_memory(problem, memory, chains=False) -> str:
    found = []
    for m in NEEDLE_RE.finditer(memory):
        if _mentions(problem, m.group("key")) and m.group("value") not in found:
            found.append(m.group("value"))
    if chains:
        for m in VAR_RE.finditer(memory):
            if m.group("name") not in found:
                found.append(m.group("name"))
    if not found:
        return "\\boxed{unknown}"
    return "\\boxed{" + ", ".join(found) + "}"


def make_mock(spec: str, seed: int = 0, **kwargs) -> MockGateway:
    """Build a mock from a CLI-style spec: ``perfect_extractor``, ``lossy:0.3``, ``fixed_answer:42``."""
    name, _, arg = spec.partition(":")
    if name == "lossy":
        script = MockScript("lossy", seed=seed, p_drop=float(arg or 0.0))
    elif name == "fixed_answer":
        script = MockScript("fixed_answer", seed=seed, text=arg)
    elif name == "replay":
        from .workflow import read_traces
        script = MockScript.replaying(read_traces(arg), seed=seed)
    else:
        script = MockScript(name, seed=seed)
    return MockGateway(script, **kwargs)
