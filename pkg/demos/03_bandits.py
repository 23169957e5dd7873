# # Exploration on five creatives
#
# Cumulative regret of four context-free bandits on fixed arms. Thompson
# sampling concentrates on the best arm quickly, so its regret flattens;
# uniform play grows linearly.

# %%
import numpy as np

from dcolab.bandit import RANDOM, THOMPSON, UCB, Policy, mean_regret

ctrs = [0.05, 0.04, 0.03, 0.02, 0.01]
T, seeds = 20_000, range(10)

# %%
policies = [THOMPSON, UCB, Policy("epsilon", 0.1, None), Policy("epsilon", 0.1, 1000), RANDOM]
curves = {p.name: mean_regret(p, ctrs, T, seeds) for p in policies}
checkpoints = [1_000, 5_000, 10_000, 20_000]
print("policy".ljust(24) + "".join(f"t={t:>6d}  " for t in checkpoints))
for name, c in curves.items():
    print(name.ljust(24) + "".join(f"{c[t - 1]:8.1f}  " for t in checkpoints))

# %% [markdown]
# Regret per step over the second half shows who has stopped exploring.

# %%
for name, c in curves.items():
    print(f"{name:24s} {np.diff(c[T // 2 - 1::T // 2])[0] / (T // 2):.5f} per step")
