# Quickstart: learn local q-functions from a random batch and act with them.
#
# We draw a random MDP with three agents (two controls each) and four states,
# record 500 uniformly random transitions, then fit AMAFQI and FQI on the
# same batch and compare the resulting policies in simulation.

import numpy as np

from batchmarl import amafqi_run, evaluate_policy, fqi_run, generalize, generate_random_mdp, sample_batch
from batchmarl.fqi import fqi_value

spec = generate_random_mdp(m=3, X=4, seed=7)
batch = sample_batch(spec, 500, np.random.default_rng(1))
print("batch:", batch.L, "samples over", len(batch.distinct_states()), "states")

# AMAFQI keeps one q-function per agent, each over that agent's own two controls.
result = amafqi_run(batch, beta=0.5, epsilon=1e-3, seed=0)
model = result.model
print("AMAFQI converged after", model.iteration, "iterations")
for j in model.agents:
    print(f"  agent {j} local q at state 0:", np.round(model.local(j).grid()[0], 3))

# Policy entries come straight from batch controls; states without a qualifying
# control would be filled by a classifier over the labeled states.
print("policy table:\n", model.policy.entries)
policy = generalize(model.policy, batch, seed=0)

# FQI fits one Q over all 2**3 joint controls; its greedy action is the reference.
fqi = fqi_run(batch, beta=0.5, epsilon=1e-3, seed=0)
greedy = [fqi_value(fqi.q, x)[1] for x in range(spec.X)]

for name, pol in (("AMAFQI", policy), ("FQI", greedy)):
    ev = evaluate_policy(spec, pol, tau=100, trials=50, beta=0.5, seed=3)
    print(f"{name:7s} cumulative reward {ev.mean_cumulative:7.2f} +- {ev.std_cumulative:.2f}")
