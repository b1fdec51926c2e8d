"""FLOPs of one full-context pass vs the memory loop, 8K to 4M context tokens."""
from memloop import cost
from memloop.templates import ANSWER_TEMPLATE, MEMORY_UPDATE_TEMPLATE, template_overhead
from memloop.tokens import TokenCounter

shape = cost.ModelShape.qwen2_5_7b()
rows = cost.compare(shape, q=1024, o=1024, N=5000)
print(f"{'c':>9} {'full':>10} {'memory':>10} {'ratio':>7}")
for r in rows:
    print(f"{r.c:>9} {r.baseline:10.3e} {r.memory_loop:10.3e} {r.ratio:7.2f}")
print("memory loop is cheaper from c =", cost.crossover(rows))

# doubling the context: about 4x for full attention, 2x for the loop
print("last doubling:", rows[-1].baseline / rows[-2].baseline, rows[-1].memory_loop / rows[-2].memory_loop)

# what one episode looks like stage by stage
plan = cost.plan_memory_loop(1024, 1024, 5000, 10_000)
for st in plan.stages:
    print(st.label, st.input_tokens, "+", st.output_tokens)

# the stage plan assumes 200/100 tokens of prompt scaffolding; ours are smaller
ws = TokenCounter()
print("measured overhead:", template_overhead(ws, MEMORY_UPDATE_TEMPLATE), template_overhead(ws, ANSWER_TEMPLATE))
