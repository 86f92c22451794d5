"""
Scheduling one instant of a HAB network
=======================================

Place users and HABs, find the best association by enumeration, then look
at the service order and offload splits the scheduler picked for it.
"""

import numpy as np

from habmec import harness, oracle, scheduler
from habmec.config import Config

# six users under three HABs with synthetic task sizes attached
scenario = harness.build_instance(Config({"scenario": {"users": 6}}), seed=2, instants=1)
print("users covered by each HAB:", scenario.coverage(0).sum(axis=0))

# every association is tried; each HAB then solves its own order/split problem
best = oracle.exhaustive_association(scenario, 0)
print("oracle association:", best.assignment)
print(f"oracle utility: {best.utility:.4f}")

# ranks (1-based) and offload fractions are stored per (user, HAB) pair
decision = best.decision
for m, n in enumerate(best.assignment):
    print(f"user {m}: HAB {n}, rank {decision.ranks[m, n]}, offload {decision.splits[m, n]:.3f}")

# sending everybody to HAB 0 (where covered) is usually worse
cover = scenario.coverage(0)
naive = np.where(cover[:, 0], 0, np.argmax(cover, axis=1))
try:
    print(f"naive utility:  {scheduler.allocate(scenario, 0, naive).utility:.4f}")
except ValueError as exc:
    print("naive association infeasible:", exc)
