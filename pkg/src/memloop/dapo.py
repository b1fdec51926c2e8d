"""Multi-conversation DAPO math.

One episode is a list of context-independent conversations that share a
single outcome reward. Advantages are group-relative per episode and are
broadcast to every token of every conversation of that episode; the
objective averages over all tokens of all conversations in the group.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .workflow import EpisodeTrace, group_records, trace_records


class ShapeError(ValueError):
    pass


class DegenerateGroup(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class DapoConfig:
    group_size: int = 16
    eps_low: float = 0.2
    eps_high: float = 0.28
    kl_beta: float = 1e-3
    normalize_by_std: bool = False

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0 < self.eps_low <= self.eps_high < 1:
            raise ValueError("need 0 < eps_low <= eps_high < 1")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be >= 0")


@dataclass
class ConversationTokens:
    token_ids: np.ndarray
    logprob_new: np.ndarray
    logprob_old: np.ndarray
    logprob_ref: np.ndarray

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids)
        for name in ("logprob_new", "logprob_old", "logprob_ref"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = len(self.token_ids)
        for name in ("logprob_new", "logprob_old", "logprob_ref"):
            if getattr(self, name).shape != (n,):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected ({n},)")

    def __len__(self):
        return len(self.token_ids)


@dataclass
class EpisodeTokens:
    conversations: list[ConversationTokens]
    reward: float


@dataclass
class GroupBatch:
    episodes: list[EpisodeTokens]

    @property
    def rewards(self) -> np.ndarray:
        return np.array([e.reward for e in self.episodes], dtype=np.float64)

    @property
    def num_tokens(self) -> int:
        return sum(len(c) for e in self.episodes for c in e.conversations)


@dataclass
class AdvantageTable:
    values: np.ndarray

    def broadcast(self, batch: GroupBatch) -> list[list[np.ndarray]]:
        if len(batch.episodes) != len(self.values):
            raise ShapeError(f"{len(self.values)} advantages for {len(batch.episodes)} episodes")
        return [[np.full(len(c), a) for c in ep.conversations]
                for a, ep in zip(self.values, batch.episodes)]


def compute_advantages(rewards: Sequence[float], config: DapoConfig = DapoConfig()) -> AdvantageTable:
    r = np.asarray(rewards, dtype=np.float64)
    if r.shape != (config.group_size,):
        raise ShapeError(f"expected {config.group_size} rewards, got {r.shape}")
    adv = r - r.mean()
    if config.normalize_by_std:
        std = r.std()
        if std == 0.0:
            raise DegenerateGroup("degenerate group: all rewards equal, no learning signal")
        adv = adv / std
    return AdvantageTable(adv)


def _check_finite(x: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise ValueError(f"non-finite {what} at token index {bad[0]}")


def kl_penalty(logprob_new, logprob_ref) -> np.ndarray:
    """Per-token k3 estimate of KL(new || ref): exp(d) - d - 1 with d = ref - new."""
    new = np.asarray(logprob_new, dtype=np.float64)
    ref = np.asarray(logprob_ref, dtype=np.float64)
    if new.shape != ref.shape:
        raise ShapeError(f"logprob shapes differ: {new.shape} vs {ref.shape}")
    _check_finite(new, "logprob_new")
    _check_finite(ref, "logprob_ref")
    d = ref - new
    return np.expm1(d) - d


def clipped_contribution(ratio, adv, eps_low, eps_high):
    return np.minimum(ratio * adv, np.clip(ratio, 1 - eps_low, 1 + eps_high) * adv)


@dataclass
class ObjectiveResult:
    value: float
    contributions: list[list[np.ndarray]]
    kl: list[list[np.ndarray]]
    num_tokens: int
    grad_logprob_new: list[list[np.ndarray]] = field(repr=False)


def dapo_objective(batch: GroupBatch, adv: AdvantageTable, config: DapoConfig = DapoConfig()) -> ObjectiveResult:
    """Token-averaged clipped objective with KL penalty over (episode, conversation, token).

    Also returns d(value)/d(logprob_new) per token; where the clip is the
    active branch of the min the derivative is zero.
    """
    if len(batch.episodes) != len(adv.values):
        raise ShapeError(f"{len(adv.values)} advantages for {len(batch.episodes)} episodes")
    convs = [c for ep in batch.episodes for c in ep.conversations]
    sizes = [len(c) for c in convs]
    total = sum(sizes)
    if total == 0:
        raise ShapeError("batch has no tokens")
    new = np.concatenate([c.logprob_new for c in convs])
    old = np.concatenate([c.logprob_old for c in convs])
    ref = np.concatenate([c.logprob_ref for c in convs])
    a = np.repeat(np.asarray(adv.values, dtype=np.float64),
                  [sum(len(c) for c in ep.conversations) for ep in batch.episodes])
    _check_finite(old, "logprob_old")
    kl = kl_penalty(new, ref)
    ratio = np.exp(new - old)
    c = clipped_contribution(ratio, a, config.eps_low, config.eps_high)
    live = np.where(a >= 0, ratio < 1 + config.eps_high, ratio > 1 - config.eps_low)
    d_c = np.where(live, ratio * a, 0.0)
    d_kl = -np.expm1(ref - new)
    grad = (d_c - config.kl_beta * d_kl) / total
    value = (c.sum() - config.kl_beta * kl.sum()) / total

    def regroup(flat):
        pieces = np.split(flat, np.cumsum(sizes)[:-1])
        out, i = [], 0
        for ep in batch.episodes:
            out.append(pieces[i:i + len(ep.conversations)])
            i += len(ep.conversations)
        return out

    return ObjectiveResult(float(value), regroup(c), regroup(kl), total, regroup(grad))


# toy policy used to check gradients and to show the memory game is learnable

@dataclass
class SoftmaxPolicy:
    logits: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=np.float64)
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("policy logits must be finite")

    def probs(self) -> np.ndarray:
        z = self.logits / self.temperature
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def log_prob_table(self) -> np.ndarray:
        z = self.logits / self.temperature
        m = z.max(axis=1, keepdims=True)
        return z - (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))

    def log_probs(self, states, actions) -> np.ndarray:
        return self.log_prob_table()[np.asarray(states, dtype=int), np.asarray(actions, dtype=int)]

    def backprop(self, states, actions, weights) -> np.ndarray:
        """Gradient of sum_k weights[k] * log pi(actions[k] | states[k]) w.r.t. the logits."""
        p = self.probs()
        g = np.zeros_like(self.logits)
        for s, a, w in zip(np.asarray(states, dtype=int), np.asarray(actions, dtype=int), weights):
            g[s] -= w * p[s]
            g[s, a] += w
        return g / self.temperature

    def sample(self, state: int, rng: np.random.Generator) -> int:
        return int(rng.choice(self.logits.shape[1], p=self.probs()[state]))


@dataclass
class PolicyConversation:
    """Token trajectory of one conversation of the toy policy: (state, action) per token."""
    states: list[int]
    actions: list[int]


def policy_batch(policy: SoftmaxPolicy, old: SoftmaxPolicy, ref: SoftmaxPolicy,
                 episodes: Sequence[Sequence[PolicyConversation]], rewards: Sequence[float]) -> GroupBatch:
    tables = [pol.log_prob_table() for pol in (policy, old, ref)]
    eps = []
    for convs, r in zip(episodes, rewards):
        toks = [ConversationTokens(c.actions, *(t[c.states, c.actions] for t in tables)) for c in convs]
        eps.append(EpisodeTokens(toks, float(r)))
    return GroupBatch(eps)


def objective_and_grad(policy: SoftmaxPolicy, old: SoftmaxPolicy, ref: SoftmaxPolicy,
                       episodes, rewards, config: DapoConfig):
    """Objective value and its analytic gradient w.r.t. ``policy.logits``."""
    batch = policy_batch(policy, old, ref, episodes, rewards)
    adv = compute_advantages(rewards, config)
    res = dapo_objective(batch, adv, config)
    states, actions, weights = [], [], []
    for convs, g_ep in zip(episodes, res.grad_logprob_new):
        for c, g in zip(convs, g_ep):
            states.extend(c.states)
            actions.extend(c.actions)
            weights.extend(g)
    return res, policy.backprop(states, actions, weights)


@dataclass(frozen=True)
class CopyMemoryGame:
    """A symbol is shown in the first chunk, then ``blank_chunks`` empty chunks, then a question.

    Every conversation emits one token. The write conversation sees the
    symbol, each blank conversation sees only the previous memory, and the
    answer conversation sees only the final memory. Reward is 1 when the
    answer equals the symbol.
    """
    n_symbols: int = 2
    blank_chunks: int = 0

    @property
    def num_states(self) -> int:
        return 3 * self.n_symbols

    def rollout(self, probs: np.ndarray, symbol: int, rng: np.random.Generator):
        n = self.n_symbols
        cdf = np.cumsum(probs, axis=1)

        def act(state):
            return min(int(np.searchsorted(cdf[state], rng.random(), side="right")), n - 1)

        mem = act(symbol)
        convs = [PolicyConversation([symbol], [mem])]
        for _ in range(self.blank_chunks):
            s = n + mem
            mem = act(s)
            convs.append(PolicyConversation([s], [mem]))
        s = 2 * n + mem
        answer = act(s)
        convs.append(PolicyConversation([s], [answer]))
        return convs, float(answer == symbol)


@dataclass
class CurvePoint:
    step: int
    mean_reward: float
    objective: float
    kl: float


def train_toy(game: CopyMemoryGame, policy: SoftmaxPolicy, config: DapoConfig = DapoConfig(group_size=8),
              steps: int = 500, lr: float = 0.1, samples_per_step: int = 16, seed: int = 0) -> list[CurvePoint]:
    """Plain gradient ascent on the group objective.

    Each step rolls out ``group_size`` episodes for each of
    ``samples_per_step`` symbols with the frozen step-start policy, then
    takes one gradient step per group (so ratios drift from 1 and the clip
    can bind). The reference policy is the initial policy. Mean reward is
    that of the step's rollouts.
    """
    rng = np.random.default_rng(seed)
    ref = SoftmaxPolicy(policy.logits.copy(), policy.temperature)
    curve = []
    for step in range(steps):
        old = SoftmaxPolicy(policy.logits.copy(), policy.temperature)
        probs = old.probs()
        groups = []
        for _ in range(samples_per_step):
            symbol = int(rng.integers(game.n_symbols))
            groups.append(list(zip(*(game.rollout(probs, symbol, rng) for _ in range(config.group_size)))))
        obj = kl = 0.0
        kl_tokens = 0
        for episodes, rewards in groups:
            res, g = objective_and_grad(policy, old, ref, episodes, rewards, config)
            with np.errstate(invalid="ignore", over="ignore"):
                policy.logits += lr * g
            if not np.all(np.isfinite(policy.logits)):
                raise TrainingDiverged(f"non-finite logits at step {step}")
            obj += res.value / samples_per_step
            kl += sum(float(k.sum()) for ep in res.kl for k in ep)
            kl_tokens += res.num_tokens
        mean_reward = float(np.mean([r for _, rewards in groups for r in rewards]))
        curve.append(CurvePoint(step, mean_reward, obj, kl / kl_tokens))
    return curve


def write_curve(path, curve: Sequence[CurvePoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mean_reward", "objective", "kl"])
        for p in curve:
            w.writerow([p.step, repr(p.mean_reward), repr(p.objective), repr(p.kl)])


# trainer export

def group_advantages(rewards: Sequence[float], group_ids: Sequence[str],
                     normalize_by_std: bool = False) -> list[float]:
    """Group-relative advantage for each episode, groups keyed by ``group_ids``."""
    by_group: dict[str, list[int]] = {}
    for i, g in enumerate(group_ids):
        by_group.setdefault(g, []).append(i)
    out = [0.0] * len(rewards)
    for idx in by_group.values():
        if len(idx) < 2:
            raise ShapeError(f"group of {len(idx)} episode; need at least 2")
        cfg = DapoConfig(group_size=len(idx), normalize_by_std=normalize_by_std)
        table = compute_advantages([rewards[i] for i in idx], cfg)
        for i, a in zip(idx, table.values):
            out[i] = float(a)
    return out


def export_trajectories(traces: Sequence[EpisodeTrace], rewards: Sequence[float | None],
                        advantages: Sequence[float] | None = None,
                        group_ids: Sequence[str] | None = None) -> list[dict]:
    """One trainer record per conversation; every conversation carries its episode's advantage."""
    if len(rewards) != len(traces):
        raise ShapeError(f"{len(rewards)} rewards for {len(traces)} traces")
    for tr, r in zip(traces, rewards):
        if r is None or not math.isfinite(r):
            raise ValueError(f"trace {tr.sample_id}#{tr.episode_index} is unscored")
    if group_ids is None:
        group_ids = [tr.sample_id for tr in traces]
    if advantages is None:
        advantages = group_advantages(rewards, group_ids)
    out = []
    for tr, r, a, g in zip(traces, rewards, advantages, group_ids):
        for rec in trace_records(tr):
            rec["conv_index"] = rec.pop("turn_index")
            rec.update(group_id=g, reward=float(r), advantage=float(a))
            out.append(rec)
    return out


def import_trajectories(records: Sequence[dict]):
    """Inverse of export_trajectories: (traces, rewards, advantages, group_ids)."""
    plain, meta = [], {}
    for rec in records:
        rec = dict(rec)
        key = (rec["sample_id"], rec.get("episode_index", 0))
        info = (rec.pop("group_id"), rec.pop("reward"), rec.pop("advantage"))
        if meta.setdefault(key, info) != info:
            raise ValueError(f"inconsistent reward/advantage within episode {key}")
        rec["turn_index"] = rec.pop("conv_index")
        plain.append(rec)
    traces = group_records(plain)
    keys = [(t.sample_id, t.episode_index) for t in traces]
    return (traces, [meta[k][1] for k in keys], [meta[k][2] for k in keys], [meta[k][0] for k in keys])


def write_jsonl(path, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
