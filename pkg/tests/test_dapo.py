import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from memloop import dapo, tasks
from memloop.dapo import (AdvantageTable, ConversationTokens, CopyMemoryGame, DapoConfig, DegenerateGroup,
                          EpisodeTokens, GroupBatch, PolicyConversation, ShapeError, SoftmaxPolicy,
                          compute_advantages, dapo_objective, kl_penalty)
from memloop.gateway import make_mock
from memloop.workflow import run_episode


def conv(new, old=None, ref=None):
    new = np.asarray(new, dtype=float)
    return ConversationTokens(np.arange(len(new)), new, new if old is None else old, new if ref is None else ref)


def test_advantage_examples():
    cfg = DapoConfig(group_size=4)
    assert compute_advantages([1, 0, 0, 1], cfg).values.tolist() == [0.5, -0.5, -0.5, 0.5]
    assert compute_advantages([0.3] * 4, cfg).values.tolist() == [0.0] * 4
    grpo = DapoConfig(group_size=2, normalize_by_std=True)
    assert compute_advantages([1, 0], grpo).values.tolist() == [1.0, -1.0]
    with pytest.raises(DegenerateGroup):
        compute_advantages([1, 1], grpo)
    with pytest.raises(ShapeError):
        compute_advantages([1, 0, 1], cfg)


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=16), st.floats(-5, 5))
def test_advantages_zero_mean_and_shift_invariant(rewards, shift):
    cfg = DapoConfig(group_size=len(rewards))
    a = compute_advantages(rewards, cfg).values
    assert abs(a.mean()) < 1e-9
    b = compute_advantages([r + shift for r in rewards], cfg).values
    assert np.allclose(a, b, atol=1e-9)


def test_objective_on_policy_is_token_weighted_mean_advantage():
    batch = GroupBatch([EpisodeTokens([conv([-1.0, -2.0])], 1.0), EpisodeTokens([conv([-0.5, -0.1, -3.0])], 1.0)])
    res = dapo_objective(batch, AdvantageTable(np.array([0.5, 0.5])), DapoConfig(group_size=2, kl_beta=0.0))
    assert res.value == pytest.approx(0.5, abs=1e-15)
    assert res.num_tokens == 5


def test_single_token_clip_arithmetic():
    c = dapo.clipped_contribution(np.array([1.5]), np.array([1.0]), 0.2, 0.28)
    assert c[0] == pytest.approx(1.28)
    c = dapo.clipped_contribution(np.array([0.5]), np.array([-1.0]), 0.2, 0.28)
    assert c[0] == pytest.approx(-0.8)


def test_kl_examples():
    assert np.all(kl_penalty([-1.0, -2.0], [-1.0, -2.0]) == 0.0)
    assert kl_penalty([0.0], [math.log(2)])[0] == pytest.approx(2 - math.log(2) - 1)
    with pytest.raises(ValueError, match="token index 1"):
        kl_penalty([0.0, np.nan], [0.0, 0.0])


@given(st.lists(st.floats(-20, 0), min_size=1, max_size=20), st.data())
def test_kl_nonnegative(new, data):
    ref = data.draw(st.lists(st.floats(-20, 0), min_size=len(new), max_size=len(new)))
    assert np.all(kl_penalty(new, ref) >= 0.0)


def test_kl_monte_carlo_matches_exact():
    p_new = np.array([0.6, 0.3, 0.1])
    p_ref = np.array([0.2, 0.5, 0.3])
    exact = float(np.sum(p_new * np.log(p_new / p_ref)))
    rng = np.random.default_rng(0)
    x = rng.choice(3, size=400_000, p=p_new)
    est = kl_penalty(np.log(p_new[x]), np.log(p_ref[x])).mean()
    assert est == pytest.approx(exact, rel=0.02)


def test_shape_and_finiteness_errors():
    with pytest.raises(ShapeError):
        ConversationTokens(np.arange(3), np.zeros(3), np.zeros(2), np.zeros(3))
    batch = GroupBatch([EpisodeTokens([conv([0.0, -1.0], old=[0.0, np.inf])], 1.0),
                        EpisodeTokens([conv([0.0])], 0.0)])
    with pytest.raises(ValueError, match="token index 1"):
        dapo_objective(batch, AdvantageTable(np.array([0.5, -0.5])), DapoConfig(group_size=2))
    with pytest.raises(ShapeError):
        dapo_objective(batch, AdvantageTable(np.array([0.5])), DapoConfig(group_size=2))


def random_batch(rng, spread=0.3):
    eps = []
    for _ in range(rng.integers(2, 5)):
        convs = []
        for _ in range(rng.integers(1, 4)):
            n = int(rng.integers(1, 6))
            old = -rng.uniform(0.1, 3.0, n)
            convs.append(conv(old + rng.normal(0, spread, n), old, old + rng.normal(0, spread, n)))
        eps.append(EpisodeTokens(convs, float(rng.integers(0, 2))))
    return GroupBatch(eps)


def test_clip_inactive_equals_unclipped_mean():
    rng = np.random.default_rng(1)
    batch = random_batch(rng, spread=0.05)
    cfg = DapoConfig(group_size=len(batch.episodes), kl_beta=0.0)
    adv = AdvantageTable(rng.normal(size=len(batch.episodes)))
    res = dapo_objective(batch, adv, cfg)
    num = sum(np.exp(c.logprob_new - c.logprob_old).sum() * a
              for a, ep in zip(adv.values, batch.episodes) for c in ep.conversations)
    assert res.value == pytest.approx(num / batch.num_tokens, rel=1e-12)


def test_duplicating_conversations_leaves_objective_unchanged():
    rng = np.random.default_rng(2)
    batch = random_batch(rng)
    cfg = DapoConfig(group_size=len(batch.episodes))
    adv = compute_advantages(batch.rewards, cfg) if batch.rewards.std() else AdvantageTable(np.ones(len(batch.episodes)))
    doubled = GroupBatch([EpisodeTokens(ep.conversations * 2, ep.reward) for ep in batch.episodes])
    assert dapo_objective(doubled, adv, cfg).value == pytest.approx(dapo_objective(batch, adv, cfg).value,
                                                                     rel=1e-12)


def toy_problem(seed):
    rng = np.random.default_rng(seed)
    n_states, n_actions = 4, 3
    old = SoftmaxPolicy(rng.normal(size=(n_states, n_actions)))
    ref = SoftmaxPolicy(old.logits + rng.normal(0, 0.3, old.logits.shape))
    policy = SoftmaxPolicy(old.logits + rng.normal(0, 0.3, old.logits.shape))
    g = 4
    episodes = [[PolicyConversation(list(rng.integers(0, n_states, k)), list(rng.integers(0, n_actions, k)))
                 for k in rng.integers(1, 5, rng.integers(1, 4))] for _ in range(g)]
    rewards = [0.0, 1.0] + list(rng.integers(0, 2, g - 2).astype(float))
    cfg = DapoConfig(group_size=g, kl_beta=0.05)
    return policy, old, ref, episodes, rewards, cfg


def finite_difference(policy, old, ref, episodes, rewards, cfg, h=1e-5):
    fd = np.zeros_like(policy.logits)
    for idx in np.ndindex(policy.logits.shape):
        vals = []
        for sign in (1, -1):
            p = SoftmaxPolicy(policy.logits.copy())
            p.logits[idx] += sign * h
            vals.append(dapo.objective_and_grad(p, old, ref, episodes, rewards, cfg)[0].value)
        fd[idx] = (vals[0] - vals[1]) / (2 * h)
    return fd


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    policy, old, ref, episodes, rewards, cfg = toy_problem(seed)
    _, grad = dapo.objective_and_grad(policy, old, ref, episodes, rewards, cfg)
    assert relative_error(grad, finite_difference(policy, old, ref, episodes, rewards, cfg)) < 1e-4


def test_zero_reward_group_gives_zero_gradient():
    policy, old, ref, episodes, _, _ = toy_problem(0)
    cfg = DapoConfig(group_size=4, kl_beta=0.0)
    _, grad = dapo.objective_and_grad(policy, old, ref, episodes, [0.0] * 4, cfg)
    assert np.all(grad == 0.0)


def test_train_toy_zero_lr_is_flat():
    game = CopyMemoryGame()
    policy = SoftmaxPolicy(np.zeros((game.num_states, 2)))
    curve = dapo.train_toy(game, policy, steps=30, lr=0.0, seed=1)
    assert np.all(policy.logits == 0.0)
    rewards = np.array([p.mean_reward for p in curve])
    assert abs(rewards.mean() - 0.5) < 0.05
    assert all(p.kl == 0.0 for p in curve)


def test_train_toy_diverges_loudly():
    game = CopyMemoryGame()
    policy = SoftmaxPolicy(np.zeros((game.num_states, 2)))
    with pytest.raises(dapo.TrainingDiverged, match="step 0"):
        dapo.train_toy(game, policy, steps=3, lr=np.inf, seed=1)


def scored_traces():
    insts = [tasks.generate("niah_multivalue", 12000, s) for s in range(2)]
    traces, rewards = [], []
    from memloop.verifiers import score
    for inst in insts:
        for g in range(4):
            tr = run_episode(inst, make_mock(f"lossy:{0.2 * g}", seed=g), episode_index=g)
            traces.append(tr)
            rewards.append(score(tr.final_answer, inst.answer_set).score)
    return traces, rewards


def test_export_records_and_round_trip(tmp_path):
    traces, rewards = scored_traces()
    records = dapo.export_trajectories(traces, rewards)
    assert len(records) == sum(len(t.conversations) for t in traces)
    per_episode = {}
    for r in records:
        per_episode.setdefault((r["sample_id"], r["episode_index"]), set()).add(r["advantage"])
    assert all(len(v) == 1 for v in per_episode.values())
    for gid in {r["group_id"] for r in records}:
        advs = [next(iter(v)) for (s, _), v in per_episode.items() if s == gid]
        assert abs(sum(advs)) < 1e-12
    p = tmp_path / "traj.jsonl"
    dapo.write_jsonl(p, records)
    back, r2, a2, g2 = dapo.import_trajectories(dapo.read_jsonl(p))
    assert back == traces
    assert r2 == rewards
    assert a2 == dapo.group_advantages(rewards, [t.sample_id for t in traces])
    assert g2 == [t.sample_id for t in traces]


def test_export_rejects_unscored():
    traces, rewards = scored_traces()
    rewards[0] = None
    with pytest.raises(ValueError, match="unscored"):
        dapo.export_trajectories(traces, rewards)
