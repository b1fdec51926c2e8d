"""Acceptance gate: one test per criterion, each adding a PASS/FAIL line to the terminal summary."""
import hashlib
import json
import math
import random
import re
import string
import time
from collections import Counter
from pathlib import Path

import numpy as np

from conftest import ACCEPTANCE_LINES
from memloop import cli, cost, dapo, tasks
from memloop.dapo import CopyMemoryGame, DapoConfig, PolicyConversation, SoftmaxPolicy
from memloop.gateway import make_mock
from memloop.tasks import CorpusArticle
from memloop.verifiers import ALL_OF, ANY_OF, AnswerSet, reward_all_of, reward_any_of, score
from memloop.workflow import MemoryState, read_traces, render_answer_prompt, render_memory_prompt, run_episode

GOLDEN = Path(__file__).parent / "golden"


def report(number, name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number} ({name}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# 1

def _tiny_problem(seed):
    rng = np.random.default_rng(seed)
    n_states, n_actions = int(rng.integers(2, 5)), int(rng.integers(2, 4))
    old = SoftmaxPolicy(rng.normal(size=(n_states, n_actions)))
    ref = SoftmaxPolicy(old.logits + rng.normal(0, 0.3, old.logits.shape))
    policy = SoftmaxPolicy(old.logits + rng.normal(0, 0.4, old.logits.shape))
    g = int(rng.integers(2, 6))
    episodes = [[PolicyConversation(list(rng.integers(0, n_states, k)), list(rng.integers(0, n_actions, k)))
                 for k in rng.integers(1, 6, rng.integers(1, 4))] for _ in range(g)]
    rewards = [1.0, 0.0] + list(rng.uniform(0, 1, g - 2))
    return policy, old, ref, episodes, rewards, DapoConfig(group_size=g, kl_beta=float(rng.uniform(0, 0.1)))


def test_gradient_fidelity():
    t0 = time.perf_counter()
    h = 1e-5
    worst = 0.0
    for seed in range(25):
        policy, old, ref, episodes, rewards, cfg = _tiny_problem(seed)
        _, grad = dapo.objective_and_grad(policy, old, ref, episodes, rewards, cfg)
        fd = np.zeros_like(grad)
        for idx in np.ndindex(grad.shape):
            vals = []
            for sign in (1, -1):
                p = SoftmaxPolicy(policy.logits.copy())
                p.logits[idx] += sign * h
                vals.append(dapo.objective_and_grad(p, old, ref, episodes, rewards, cfg)[0].value)
            fd[idx] = (vals[0] - vals[1]) / (2 * h)
        err = np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), np.linalg.norm(fd), 1e-12)
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    report(1, "gradient fidelity", worst < 1e-4 and elapsed < 10,
           f"25 batches, max rel err {worst:.2e} (< 1e-4), {elapsed:.2f} s (< 10 s)")


# 2

def test_advantage_law():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        g = int(rng.integers(2, 33))
        rewards = rng.integers(0, 2, g) if rng.random() < 0.5 else rng.uniform(0, 1, g)
        a = dapo.compute_advantages(rewards, DapoConfig(group_size=g)).values
        worst = max(worst, abs(a.mean()))
    grpo = dapo.compute_advantages([1, 0], DapoConfig(group_size=2, normalize_by_std=True)).values.tolist()
    report(2, "advantage law", worst <= 1e-12 and grpo == [1.0, -1.0],
           f"1000 groups, max |mean| {worst:.1e} (<= 1e-12); GRPO (1,0) -> {tuple(grpo)}")


# 3

def test_toy_rl_learning():
    game = CopyMemoryGame(n_symbols=2)
    policy = SoftmaxPolicy(np.zeros((game.num_states, 2)))
    curve = dapo.train_toy(game, policy, DapoConfig(group_size=8), steps=500, lr=0.1, seed=0)
    r = np.array([p.mean_reward for p in curve])
    start = r[:10].mean()
    smooth = np.convolve(r, np.ones(10) / 10, mode="valid")
    hit = int(np.argmax(smooth >= 0.9)) + 9 if np.any(smooth >= 0.9) else None

    flat_policy = SoftmaxPolicy(np.zeros((game.num_states, 2)))
    flat = dapo.train_toy(game, flat_policy, DapoConfig(group_size=8), steps=100, lr=0.0, seed=0)
    fr = np.array([p.mean_reward for p in flat])
    flat_ok = bool(np.all(flat_policy.logits == 0)) and abs(fr.mean() - 0.5) < 0.03 and \
        abs(fr[:50].mean() - fr[50:].mean()) < 0.05
    ok = abs(start - 0.5) < 0.1 and hit is not None and r[-50:].mean() >= 0.9 and flat_ok
    report(3, "toy RL learning", ok,
           f"start {start:.3f}, 10-step mean reaches 0.9 at step {hit}, last-50 mean {r[-50:].mean():.3f}; "
           f"lr=0 mean {fr.mean():.3f}, logits unchanged")


# 4

def test_workflow_linearity():
    t_start = time.perf_counter()
    gw = make_mock("perfect_extractor")
    run_episode(tasks.generate("niah_single_2", 65536, 99), gw)  # warm-up
    lengths = list(tasks.TOKEN_SCHEDULE)
    acc_ok = calls_ok = True
    times = []
    for c in lengths:
        per_family = []
        for fam in ("niah_single_1", "niah_single_2", "niah_single_3"):
            inst = tasks.generate(fam, c, 1)
            best = math.inf
            for _ in range(5):
                before = gw.calls
                t0 = time.perf_counter()
                tr = run_episode(inst, gw)
                best = min(best, time.perf_counter() - t0)
                calls_ok &= gw.calls - before == math.ceil(c / 5000) + 1
            acc_ok &= score(tr.final_answer, inst.answer_set).score == 1.0
            per_family.append(best)
        times.append(sum(per_family))
    slope = float(np.polyfit(np.log(lengths), np.log(times), 1)[0])
    elapsed = time.perf_counter() - t_start
    ok = acc_ok and calls_ok and abs(slope - 1.0) <= 0.15 and elapsed < 300
    report(4, "workflow linearity", ok,
           f"accuracy 100% at 8K..512K: {acc_ok}; calls == ceil(c/N)+1: {calls_ok}; "
           f"log-log exponent {slope:.3f} (1.0 +/- 0.15); {elapsed:.1f} s")


# 5

def test_cost_model():
    shape = cost.ModelShape.qwen2_5_7b()
    rows = cost.compare(shape)
    per_token = [r.memory_loop / r.c for r in rows if r.c > 64_000]
    spread = max(per_token) / min(per_token) - 1
    base_ratio = rows[-1].baseline / rows[-2].baseline
    mem_ratio = rows[-1].memory_loop / rows[-2].memory_loop
    plan = cost.plan_memory_loop(1024, 1024, 5000, 10_000)
    stages_ok = plan.k == 2 and [s.total_tokens for s in plan.stages] == [2248, 7248, 7248, 2148] and \
        [s.input_tokens for s in plan.stages] == [1224, 6224, 6224, 1124]
    ok = spread <= 0.05 and abs(base_ratio / 4 - 1) <= 0.05 and abs(mem_ratio / 2 - 1) <= 0.05 and stages_ok
    report(5, "cost model", ok,
           f"per-token spread beyond 64K {spread:.2%}; doubling ratios baseline {base_ratio:.3f}, "
           f"memory {mem_ratio:.3f}; stage plan k=2 (2248, 7248, 7248, 2148): {stages_ok}")


# 6

def _oracle_words(text):
    text = "".join(" " if ch in string.punctuation else ch for ch in text.lower())
    return [w for w in text.split() if w not in ("a", "an", "the")]


def _oracle_all_of(pred, ys):
    p = _oracle_words(pred)
    hits = 0
    for y in ys:
        w = _oracle_words(y)
        if all(t.isdigit() for t in w):
            hits += any(p[i:i + len(w)] == w for i in range(len(p) - len(w) + 1))
        else:
            hits += " ".join(w) in " ".join(p)
    return hits / len(ys)


def test_verifier_oracles():
    rng = random.Random(0)
    vocab = ["7", "12", "123", "1234", "1234567", "apple", "pie", "Apple-Pie", "the", "an", "x-ray", "ray",
             ",", ".", "!", "NEW", "york", "City", "{", "}"]
    mismatches = 0
    for _ in range(10_000):
        ys = []
        while len(ys) < rng.randint(1, 5):
            y = " ".join(rng.choices(vocab, k=rng.randint(1, 3)))
            if _oracle_words(y) and y not in ys:
                ys.append(y)
        pred = " ".join(rng.choices(vocab, k=rng.randint(0, 15)))
        mismatches += reward_all_of(pred, AnswerSet(tuple(ys), ALL_OF)).score != _oracle_all_of(pred, ys)
    case = "Greenwich Village, New York City"
    y = AnswerSet((case,), ANY_OF)
    variants = [case, "greenwich village,  new york city.", "The answer: \\boxed{greenwich Village, New York City!}"]
    variants_ok = [reward_any_of(v, y).score == 1.0 for v in variants]
    variants_ok[2] = variants_ok[2] and reward_any_of(variants[2], y).extraction_ok
    report(6, "verifier oracles", mismatches == 0 and all(variants_ok),
           f"{mismatches} mismatches in 10^4 all_of cases; case-study string under 3 variants: {variants_ok}")


# 7

def _digest(inst):
    return hashlib.sha256(json.dumps(inst.to_dict(), sort_keys=True).encode()).hexdigest()


def _reachable(context, question):
    value = re.search(r"assigned the value (\d+)", question).group(1)
    edges = re.findall(r"VAR ([A-Z]+) = (\w+)\.", context)
    seen, frontier = set(), {value}
    while frontier:
        frontier = {n for n, rhs in edges if rhs in frontier and n not in seen}
        seen |= frontier
    return seen


def _top_words(context, k):
    ranked = Counter(context.split()).most_common()
    if ranked[k - 1][1] == ranked[k][1]:
        return None
    return {w for w, _ in ranked[:k]}


def _corpus():
    rng = random.Random(5)
    pool = [CorpusArticle(f"p{i}", f"Entry {i}",
                          " ".join(rng.choice(tasks.ESSAY_SENTENCES) for _ in range(4)), 0) for i in range(400)]
    for a in pool:
        a.token_count = len(a.text.split())
    return pool


def test_synthesis_soundness():
    n = 1000
    pool = _corpus()
    problems = []
    for fam in tasks.FAMILIES:
        for seed in range(n):
            if fam == "qa_haystack":
                rng = random.Random(seed)
                answer = f"{rng.choice(['Greenwich', 'Harbor', 'Maple'])} {rng.randint(100, 999)}"
                gold = [CorpusArticle(f"g{seed}", "Gold", f"The place is {answer} by all accounts.", 7)]
                make = lambda: tasks.build_qa_haystack(f"Where is item {seed}?", [answer], gold, pool, 50, seed)
            else:
                make = lambda: tasks.generate(fam, 2048, seed)
            inst = make()
            if _digest(make()) != _digest(inst):
                problems.append(f"{fam}/{seed}: regeneration differs")
            if fam != "qa_haystack" and abs(len(inst.context.split()) - 2048) > 0.02 * 2048:
                problems.append(f"{fam}/{seed}: length {len(inst.context.split())}")
            if fam == "qa_haystack" and inst.context.count("\n\nDocument ") != 49:
                problems.append(f"{fam}/{seed}: wrong article count")
            if fam in tasks.RETRIEVAL_FAMILIES or fam == "freq_words":
                if not all(a in inst.context for a in inst.answers):
                    problems.append(f"{fam}/{seed}: answer missing from context")
            if fam == "variable_tracking" and _reachable(inst.context, inst.question) != set(inst.answers):
                problems.append(f"{fam}/{seed}: reachability oracle disagrees")
            if fam == "freq_words" and _top_words(inst.context, len(inst.answers)) != set(inst.answers):
                problems.append(f"{fam}/{seed}: count oracle disagrees")
    report(7, "synthesis soundness", not problems,
           f"{n} instances x {len(tasks.FAMILIES)} families; {len(problems)} problems {problems[:3]}")


# 8

def test_template_fidelity():
    mem = render_memory_prompt("Q?", MemoryState.empty(), "chunk text")
    ans = render_answer_prompt("Q?", "facts")
    golden_ok = (mem.encode() == (GOLDEN / "memory_update.txt").read_bytes() and
                 ans.encode() == (GOLDEN / "answer.txt").read_bytes())
    order_ok = (mem.index("<problem>") < mem.index("</problem>") < mem.index("<memory>") <
                mem.index("</memory>") < mem.index("<section>") < mem.index("</section>") <
                mem.index("Updated memory:"))
    cues_ok = mem.endswith("Updated memory:") and ans.endswith("Your answer:") and "\\boxed{}" in ans
    report(8, "template fidelity", golden_ok and order_ok and cues_ok,
           f"golden bytes match: {golden_ok}; tag order: {order_ok}; cues and \\boxed{{}}: {cues_ok}")


# 9

def test_export_round_trip(tmp_path):
    data = tasks.dataset_path(tmp_path, "niah_multivalue", 12000)
    tasks.write_dataset(data, [tasks.generate("niah_multivalue", 12000, s, instance_id=f"mv-{s}")
                               for s in range(4)])
    assert cli.main(["eval", "--dataset", str(data), "--mock", "lossy:0.4", "--group-size", "4",
                     "--out", str(tmp_path / "run")]) == 0
    assert cli.main(["export-traj", "--traces", str(tmp_path / "run" / "traces.jsonl"), "--dataset", str(data),
                     "--out", str(tmp_path / "exp")]) == 0
    records = dapo.read_jsonl(tmp_path / "exp" / "trajectories.jsonl")
    traces, rewards, advantages, groups = dapo.import_trajectories(records)
    originals = read_traces(tmp_path / "run" / "traces.jsonl")
    by_id = {i.instance_id: i for i in tasks.read_dataset(data)}
    expected_r = [score(t.final_answer, by_id[t.sample_id].answer_set).score for t in originals]
    expected_a = dapo.group_advantages(expected_r, [t.sample_id for t in originals])
    traces_ok = traces == originals
    adv_ok = advantages == expected_a and rewards == expected_r
    per_episode = {}
    for r in records:
        per_episode.setdefault((r["sample_id"], r["episode_index"]), set()).add(r["advantage"])
    constant_ok = all(len(v) == 1 for v in per_episode.values())
    sums = [abs(sum(a for a, g in zip(advantages, groups) if g == gid)) for gid in set(groups)]
    zero_ok = max(sums) < 1e-12
    reexport = dapo.export_trajectories(traces, rewards, advantages, groups)
    report(9, "export round-trip", traces_ok and adv_ok and constant_ok and zero_ok and reexport == records,
           f"{len(records)} records; traces bit-exact: {traces_ok}; advantages bit-exact: {adv_ok}; "
           f"constant per episode: {constant_ok}; max |group sum| {max(sums):.1e}")
