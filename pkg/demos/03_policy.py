# How the policy table is filled.
#
# At each iteration a state is (re)labeled when every agent's local maximum
# grew by at least gamma and some batch control at that state attains all the
# agents' maxima. A large gamma leaves states unlabeled; the generalization
# step then classifies them from the labeled ones.

import numpy as np

from batchmarl import amafqi_run, generalize, generate_random_mdp, sample_batch
from batchmarl.policy import greedy_gap_audit

spec = generate_random_mdp(m=2, X=5, seed=5)
batch = sample_batch(spec, 300, np.random.default_rng(0))

for gamma in (1e-3, 1.0, 5.0):
    model = amafqi_run(batch, beta=0.5, epsilon=1e-3, gamma=gamma, seed=1).model
    table = model.policy
    print(f"gamma={gamma}: labeled states {table.labeled_states().tolist()}, last updates {table.last_update.tolist()}")
    if table.is_sentinel().all():
        print("  nothing labeled, no policy can be generalized")
        continue
    audit = greedy_gap_audit(table, model.locals, batch)
    print(f"  gap below gamma on {audit.fraction_within_gamma:.0%} of labeled states")
    policy = generalize(table, batch, seed=0)
    print("  actions:", [tuple(int(a) for a in policy(x)) for x in range(spec.X)],
          "(classifier used)" if policy.uses_classifier else "")
