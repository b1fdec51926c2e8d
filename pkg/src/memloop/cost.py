"""FLOP accounting: one full-context pass vs the staged memory workflow.

Dense decoder forward cost for a sequence of ``s`` tokens::

    flops_dense(s) = s * linear_flops_per_token + 2 * L * H * d_head * s * (s + 1)

The linear part counts q/k/v/o projections, a gated (three-matrix) MLP and
the LM head at 2 FLOPs per multiply-add. The second term is causal
attention: token t scores against t keys and mixes t values, 4 * H * d_head * t
FLOPs per layer. Norms, activations and softmax are ignored. All
arithmetic is on Python ints, so results are exact.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

UPDATE_OVERHEAD = 200
FINAL_OVERHEAD = 100
DEFAULT_C_GRID = tuple(8000 * 2 ** i for i in range(10))


@dataclass(frozen=True)
class ModelShape:
    num_layers: int
    hidden_size: int
    ffn_size: int
    num_attention_heads: int
    num_kv_heads: int
    vocab_size: int

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hidden_size % self.num_attention_heads:
            raise ValueError("hidden_size must be divisible by num_attention_heads")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_attention_heads

    @classmethod
    def qwen2_5_7b(cls) -> "ModelShape":
        return cls(28, 3584, 18944, 28, 4, 152064)

    @classmethod
    def qwen2_5_14b(cls) -> "ModelShape":
        return cls(48, 5120, 13824, 40, 8, 152064)


def linear_flops_per_token(shape: ModelShape) -> int:
    d, hd = shape.hidden_size, shape.head_dim
    q = shape.num_attention_heads * hd
    kv = shape.num_kv_heads * hd
    per_layer = d * q + 2 * d * kv + q * d + 3 * d * shape.ffn_size
    return 2 * (shape.num_layers * per_layer + d * shape.vocab_size)


def attention_flops(shape: ModelShape, seq_len: int) -> int:
    return 2 * shape.num_layers * shape.num_attention_heads * shape.head_dim * seq_len * (seq_len + 1)


def flops_dense(shape: ModelShape, seq_len: int) -> int:
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    return seq_len * linear_flops_per_token(shape) + attention_flops(shape, seq_len)


@dataclass(frozen=True)
class Stage:
    label: str
    input_tokens: int
    output_tokens: int

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens


@dataclass(frozen=True)
class StagePlan:
    q: int
    o: int
    N: int
    c: int
    stages: tuple[Stage, ...] = field(default=())
    update_overhead: int = UPDATE_OVERHEAD
    final_overhead: int = FINAL_OVERHEAD

    @property
    def k(self) -> int:
        return sum(1 for s in self.stages if s.label == "update")


def plan_memory_loop(q: int, o: int, N: int, c: int, update_overhead: int = UPDATE_OVERHEAD,
                  final_overhead: int = FINAL_OVERHEAD) -> StagePlan:
    """Initialize, then ceil(c/N) memory updates, then the final answer."""
    if min(q, o, N, c) <= 0:
        raise ValueError("q, o, N and c must be positive")
    k = math.ceil(c / N)
    stages = [Stage("init", q + update_overhead, o)]
    stages += [Stage("update", q + update_overhead + N, o)] * k
    stages.append(Stage("final", q + final_overhead, o))
    return StagePlan(q, o, N, c, tuple(stages), update_overhead, final_overhead)


def memory_loop_flops(shape: ModelShape, plan: StagePlan) -> int:
    cache: dict[int, int] = {}
    total = 0
    for st in plan.stages:
        if st.total_tokens not in cache:
            cache[st.total_tokens] = flops_dense(shape, st.total_tokens)
        total += cache[st.total_tokens]
    return total


def baseline_flops(shape: ModelShape, q: int, o: int, c: int) -> int:
    # output tokens are inside the quadratic term
    return flops_dense(shape, q + c + o)


@dataclass(frozen=True)
class CostRow:
    c: int
    baseline: int
    memory_loop: int

    @property
    def ratio(self) -> float:
        return self.baseline / self.memory_loop


def compare(shape: ModelShape, q: int = 1024, o: int = 1024, N: int = 5000,
            c_grid: Sequence[int] = DEFAULT_C_GRID) -> list[CostRow]:
    if any(b <= a for a, b in zip(c_grid, c_grid[1:])):
        raise ValueError("c_grid must be strictly increasing")
    return [CostRow(c, baseline_flops(shape, q, o, c), memory_loop_flops(shape, plan_memory_loop(q, o, N, c)))
            for c in c_grid]


def crossover(rows: Sequence[CostRow]) -> int | None:
    """Smallest grid length at which the staged workflow is cheaper, or None."""
    for r in rows:
        if r.memory_loop < r.baseline:
            return r.c
    return None


def write_csv(path, rows: Sequence[CostRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c", "baseline", "memory_loop", "ratio"])
        for r in rows:
            w.writerow([r.c, r.baseline, r.memory_loop, repr(r.ratio)])


def write_svg(path, rows: Sequence[CostRow], title: str = "FLOPs vs context length") -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    cs = [r.c for r in rows]
    ax.loglog(cs, [float(r.baseline) for r in rows], marker="o", label="full context")
    ax.loglog(cs, [float(r.memory_loop) for r in rows], marker="s", label="memory workflow")
    ax.set_xlabel("context tokens")
    ax.set_ylabel("FLOPs")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    # fixed salt keeps element ids, and so the file bytes, reproducible
    with matplotlib.rc_context({"svg.hashsalt": "memloop"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
