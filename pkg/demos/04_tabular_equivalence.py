# Tabular check: local updates track the per-agent max of the central Q.
#
# On a deterministic MDP with non-negative rewards, the distributed update
# run on tables gives, at every sweep, exactly max over joint controls with
# u(j) = a of the centralized Q. We test this on a handful of random toys.

import numpy as np

from batchmarl.oracle import (
    project_to_agents,
    proposition1_check,
    random_deterministic_toy,
    tabular_distributed_iterate,
    tabular_q_iterate,
)

toy = random_deterministic_toy(m=2, X=3, seed=0)
q = tabular_q_iterate(toy, 0.5, 5)
lq = tabular_distributed_iterate(toy, 0.5, 5)
print("central Q after 5 sweeps:\n", q[5])
print("agent 0, distributed:\n", lq[5][0])
print("agent 0, projected central:\n", project_to_agents(q[5], 2, 2)[0])

for seed in range(10):
    toy = random_deterministic_toy(m=3, X=4, seed=seed)
    holds, dev = proposition1_check(toy, beta=0.5, n_max=20)
    print(f"toy {seed}: holds={holds} max deviation={dev:.1e}")
