"""Walk through one episode of the chunked memory loop on a needle task."""
import math

from memloop import tasks
from memloop.gateway import make_mock
from memloop.verifiers import score
from memloop.workflow import Budgets, chunk_document, run_episode

# a 40K-token haystack with one magic-number sentence somewhere inside
inst = tasks.generate("niah_single_2", 40_000, seed=7)
print(inst.question)
print("answer:", inst.answers)

# the document is read 5000 tokens at a time
plan = chunk_document(inst.context, Budgets().chunk)
print("chunks:", plan.num_chunks, "sizes:", plan.chunk_token_counts)
assert plan.num_chunks == math.ceil(40_000 / 5000)

# the mock keeps only needle sentences about the queried key
gw = make_mock("perfect_extractor")
trace = run_episode(inst, gw)
for i, conv in enumerate(trace.conversations[:-1]):
    mem = conv.memory_after
    print(f"after chunk {i}: {mem.token_count:4d} tokens | {mem.text[:70]!r}")

print("final answer:", trace.final_answer)
print("reward:", score(trace.final_answer, inst.answer_set).score)
print("gateway calls:", gw.calls)

# a forgetful reader loses the needle with some probability
for p in (0.0, 0.5, 1.0):
    hits = 0
    for seed in range(20):
        tr = run_episode(inst, make_mock(f"lossy:{p}", seed=seed))
        hits += score(tr.final_answer, inst.answer_set).score
    print(f"p_drop={p}: accuracy {hits / 20:.2f}")
