"""The group objective by hand, then a gradient check and a tiny training run."""
import numpy as np

from memloop import dapo
from memloop.dapo import (AdvantageTable, ConversationTokens, CopyMemoryGame, DapoConfig, EpisodeTokens,
                          GroupBatch, SoftmaxPolicy)

# four episodes of one question; rewards 1, 0, 0, 1
cfg = DapoConfig(group_size=4)
adv = dapo.compute_advantages([1, 0, 0, 1], cfg)
print("advantages:", adv.values)  # [0.5, -0.5, -0.5, 0.5]

# every conversation of an episode gets that episode's advantage
def conv(n, shift=0.0):
    old = np.full(n, -1.0)
    return ConversationTokens(np.arange(n), old + shift, old, old)

batch = GroupBatch([
    EpisodeTokens([conv(3), conv(2), conv(4)], 1.0),
    EpisodeTokens([conv(3), conv(1)], 0.0),
    EpisodeTokens([conv(5)], 0.0),
    EpisodeTokens([conv(2), conv(2, shift=0.5)], 1.0),
])
res = dapo.dapo_objective(batch, adv, cfg)
print("tokens:", res.num_tokens, "objective:", round(res.value, 6))
# the shifted conversation has ratio e^0.5 = 1.65 > 1.28, so its tokens are clipped
print("clipped contributions:", res.contributions[3][1])

# analytic gradient vs central differences on the toy policy
game = CopyMemoryGame()
rng = np.random.default_rng(0)
old = SoftmaxPolicy(rng.normal(size=(game.num_states, 2)))
policy = SoftmaxPolicy(old.logits + rng.normal(0, 0.2, old.logits.shape))
cfg = DapoConfig(group_size=8)
episodes, rewards = zip(*(game.rollout(old.probs(), int(rng.integers(2)), rng) for _ in range(8)))
_, grad = dapo.objective_and_grad(policy, old, old, episodes, rewards, cfg)
fd = np.zeros_like(grad)
for idx in np.ndindex(grad.shape):
    up, down = SoftmaxPolicy(policy.logits.copy()), SoftmaxPolicy(policy.logits.copy())
    up.logits[idx] += 1e-5
    down.logits[idx] -= 1e-5
    f = lambda p: dapo.objective_and_grad(p, old, old, episodes, rewards, cfg)[0].value
    fd[idx] = (f(up) - f(down)) / 2e-5
print("max |analytic - numeric|:", np.abs(grad - fd).max())

# the write-then-answer game is learnable from outcome reward alone
policy = SoftmaxPolicy(np.zeros((game.num_states, 2)))
curve = dapo.train_toy(game, policy, steps=150, lr=0.1, seed=0)
for p in curve[::25]:
    print(f"step {p.step:3d}  mean reward {p.mean_reward:.3f}")
