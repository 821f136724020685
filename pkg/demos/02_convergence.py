# Convergence of the local q-functions.
#
# Every fitted value only moves up from one iteration to the next, and the
# whole sequence stays below R_max / (1 - beta). The sup-norm change per
# iteration therefore dies out; this script prints the trace for each agent.

import numpy as np

from batchmarl import amafqi_run, generate_random_mdp, sample_batch
from batchmarl.mdp import R_MAX

beta = 0.5
spec = generate_random_mdp(m=3, X=4, seed=21)
batch = sample_batch(spec, 500, np.random.default_rng(4))
result = amafqi_run(batch, beta=beta, epsilon=1e-3, seed=2)

for j in result.model.agents:
    trace = result.sup_norms(j)
    picks = np.unique(np.geomspace(1, len(trace), 8).astype(int)) - 1
    print(f"agent {j}: " + "  ".join(f"N={n + 1}:{trace[n]:.1e}" for n in picks))

log = np.array(result.model.local(0).grid_log)
print("smallest per-iteration step:", np.diff(log, axis=0).min())
print("largest value:", log.max(), "bound:", R_MAX / (1 - beta))

# The same trace as CSV, ready for plotting elsewhere.
print(result.trace_csv().splitlines()[:4])
