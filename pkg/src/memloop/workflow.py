"""The chunked read -> overwrite -> answer loop.

A document is cut into chunks of at most ``Budgets.chunk`` tokens. Each chunk
is shown to the model together with the problem and the current memory, and
the model's reply *replaces* the memory. After the last chunk one more
conversation turns the memory into a boxed answer.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Iterable

from .gateway import GatewayError
from .tasks import TaskInstance
from .templates import ANSWER_TEMPLATE, EMPTY_MEMORY, MEMORY_UPDATE_TEMPLATE, fill, tag_collisions
from .tokens import WHITESPACE, TokenCounter

logger = logging.getLogger(__name__)

MEMORY_UPDATE = "memory_update"
ANSWER = "answer"


class ChunkingError(ValueError):
    pass


class QueryTooLong(ValueError):
    pass


@dataclass(frozen=True)
class Budgets:
    query: int = 1024
    chunk: int = 5000
    memory: int = 1024
    output: int = 1024


@dataclass
class ChunkPlan:
    chunk_texts: list[str]
    chunk_token_counts: list[int]
    budget: int

    @property
    def num_chunks(self) -> int:
        return len(self.chunk_texts)


def chunk_document(text: str, budget: int = 5000, counter: TokenCounter = WHITESPACE,
                   split_words: bool = True) -> ChunkPlan:
    """Greedy left-to-right packing of ``text`` into chunks of at most ``budget`` tokens.

    Cuts happen at token starts, preferring ones that follow whitespace. A
    word longer than the budget is split mid-word unless ``split_words`` is
    False, in which case ChunkingError reports its character offset.
    """
    if budget < 1:
        raise ChunkingError("chunk budget must be >= 1")
    starts = counter.starts(text)
    if not starts:
        raise ChunkingError("text contains no tokens")
    n = len(starts)
    cuts = [0]
    i = 0
    while i + budget < n:
        j = i + budget
        b = j
        while b > i and not text[starts[b] - 1].isspace():
            b -= 1
        if b == i:
            if not split_words:
                start = starts[i]
                while start > 0 and not text[start - 1].isspace():
                    start -= 1
                raise ChunkingError(f"word at offset {start} exceeds the chunk budget of {budget} tokens")
            b = j
        cuts.append(b)
        i = b
    bounds = [0] + [starts[c] for c in cuts[1:]] + [len(text)]
    texts = [text[a:b] for a, b in zip(bounds, bounds[1:])]
    if counter.mode == "whitespace":
        counts = [b - a for a, b in zip(cuts, cuts[1:] + [n])]
    else:
        counts = [counter.count(t) for t in texts]
    return ChunkPlan(texts, counts, budget)


@dataclass(frozen=True)
class MemoryState:
    text: str
    token_count: int
    capacity: int = 1024
    truncated: bool = False

    @classmethod
    def empty(cls, capacity: int = 1024, counter: TokenCounter = WHITESPACE) -> "MemoryState":
        return cls(EMPTY_MEMORY, counter.count(EMPTY_MEMORY), capacity)

    @classmethod
    def from_completion(cls, completion: str, capacity: int = 1024,
                        counter: TokenCounter = WHITESPACE) -> "MemoryState":
        """Overwrite rule: the new memory is the completion, hard-truncated at ``capacity`` tokens."""
        text, cut = counter.truncate(completion.strip(), capacity)
        return cls(text, counter.count(text), capacity, cut)


@dataclass
class ConversationRecord:
    kind: str
    prompt: str
    completion: str
    token_ids: list[int] | None = None
    logprobs: list[float] | None = None
    memory_after: MemoryState | None = None
    warnings: list[str] = field(default_factory=list)
    wall_clock_ms: float = field(default=0.0, compare=False)


@dataclass
class EpisodeTrace:
    sample_id: str
    conversations: list[ConversationRecord] = field(default_factory=list)
    episode_index: int = 0

    @property
    def complete(self) -> bool:
        kinds = [c.kind for c in self.conversations]
        return bool(kinds) and kinds[-1] == ANSWER and kinds.count(ANSWER) == 1

    @property
    def final_answer(self) -> str:
        if not self.complete:
            raise ValueError(f"episode {self.sample_id}#{self.episode_index} has no answer conversation")
        return self.conversations[-1].completion

    @property
    def final_memory(self) -> MemoryState | None:
        for conv in reversed(self.conversations):
            if conv.memory_after is not None:
                return conv.memory_after
        return None

    @property
    def wall_clock_ms(self) -> list[float]:
        return [c.wall_clock_ms for c in self.conversations]


class EpisodeAborted(RuntimeError):
    """The gateway failed mid-episode; ``trace`` holds the conversations completed so far."""

    def __init__(self, trace: EpisodeTrace, cause: Exception):
        super().__init__(f"episode {trace.sample_id} aborted after {len(trace.conversations)} "
                         f"conversations: {cause}")
        self.trace = trace
        self.cause = cause


def _memory_text(memory) -> str:
    return memory.text if isinstance(memory, MemoryState) else str(memory)


def render_memory_prompt(problem: str, memory: MemoryState | str, chunk: str) -> str:
    return fill(MEMORY_UPDATE_TEMPLATE, prompt=problem, memory=_memory_text(memory), chunk=chunk)


def render_answer_prompt(problem: str, memory: MemoryState | str) -> str:
    return fill(ANSWER_TEMPLATE, prompt=problem, memory=_memory_text(memory))


def _collisions(*texts: str) -> list[str]:
    out: list[str] = []
    for t in texts:
        for tag in tag_collisions(t):
            if tag not in out:
                out.append(tag)
    return out


def run_episode(instance: TaskInstance, gateway, budgets: Budgets = Budgets(),
                counter: TokenCounter = WHITESPACE, episode_index: int = 0) -> EpisodeTrace:
    """Run one full episode: one memory update per chunk, then one answer conversation."""
    problem = instance.question
    q_tokens = counter.count(problem)
    if q_tokens > budgets.query:
        raise QueryTooLong(f"query has {q_tokens} tokens, budget is {budgets.query}")
    plan = chunk_document(instance.context, budgets.chunk, counter)
    trace = EpisodeTrace(instance.instance_id, [], episode_index)
    memory = MemoryState.empty(budgets.memory, counter)

    def call(prompt):
        t0 = time.perf_counter()
        try:
            out = gateway.complete(prompt)
        except GatewayError as exc:
            raise EpisodeAborted(trace, exc) from exc
        return out, (time.perf_counter() - t0) * 1000.0

    for chunk in plan.chunk_texts:
        warnings = _collisions(problem, memory.text, chunk)
        if warnings:
            logger.warning("tag collision in %s: %s", instance.instance_id, warnings)
        prompt = render_memory_prompt(problem, memory, chunk)
        out, ms = call(prompt)
        memory = MemoryState.from_completion(out.text, budgets.memory, counter)
        if memory.truncated:
            logger.info("memory truncated to %d tokens in %s", budgets.memory, instance.instance_id)
        trace.conversations.append(ConversationRecord(MEMORY_UPDATE, prompt, out.text, out.token_ids,
                                                      out.logprobs, memory, warnings, ms))
    warnings = _collisions(problem, memory.text)
    prompt = render_answer_prompt(problem, memory)
    out, ms = call(prompt)
    trace.conversations.append(ConversationRecord(ANSWER, prompt, out.text, out.token_ids, out.logprobs,
                                                  None, warnings, ms))
    return trace


def trace_records(trace: EpisodeTrace) -> list[dict]:
    """One JSON-ready dict per conversation (timing excluded, so records are reproducible)."""
    out = []
    for turn, conv in enumerate(trace.conversations):
        rec = {
            "sample_id": trace.sample_id,
            "episode_index": trace.episode_index,
            "turn_index": turn,
            "kind": conv.kind,
            "prompt": conv.prompt,
            "completion": conv.completion,
        }
        if conv.token_ids is not None:
            rec["token_ids"] = conv.token_ids
        if conv.logprobs is not None:
            rec["logprobs"] = conv.logprobs
        if conv.memory_after is not None:
            m = conv.memory_after
            rec["memory_after"] = m.text
            rec["memory_token_count"] = m.token_count
            rec["memory_capacity"] = m.capacity
            rec["memory_truncated"] = m.truncated
        if conv.warnings:
            rec["warnings"] = conv.warnings
        out.append(rec)
    return out


def record_to_conversation(rec: dict) -> ConversationRecord:
    mem = None
    if "memory_after" in rec:
        mem = MemoryState(rec["memory_after"], rec["memory_token_count"], rec["memory_capacity"],
                          rec["memory_truncated"])
    return ConversationRecord(rec["kind"], rec["prompt"], rec["completion"], rec.get("token_ids"),
                              rec.get("logprobs"), mem, list(rec.get("warnings", [])))


def group_records(records: Iterable[dict]) -> list[EpisodeTrace]:
    episodes: dict[tuple, list[dict]] = {}
    for rec in records:
        episodes.setdefault((rec["sample_id"], rec.get("episode_index", 0)), []).append(rec)
    out = []
    for (sid, ep), recs in episodes.items():
        recs.sort(key=lambda r: r["turn_index"])
        out.append(EpisodeTrace(sid, [record_to_conversation(r) for r in recs], ep))
    return out


def write_traces(path, traces: Iterable[EpisodeTrace], mode: str = "w") -> None:
    with open(path, mode, encoding="utf-8") as fh:
        for tr in traces:
            for rec in trace_records(tr):
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_traces(path, complete_only: bool = False) -> list[EpisodeTrace]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except ValueError:
                # a torn final line from an interrupted run
                logger.warning("%s:%d: skipping unreadable trace line", path, lineno)
    traces = group_records(records)
    if complete_only:
        traces = [t for t in traces if t.complete]
    return traces
