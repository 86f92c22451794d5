"""
Training a federated association model
======================================

Label a short horizon with the oracle, split one user's history across the
HABs that held it and train the multi-task SVM. Then compare it against the
centralized solution.
"""

import numpy as np

from habmec import fedsvm, harness, oracle
from habmec.config import Config
from habmec.scenario import split_train_test

# a mobile scenario, so users change HAB and more than one HAB holds samples
cfg = Config({"scenario": {"users": 4, "habs": 3, "mobility": True, "speed": 150.0},
              "traffic": {"instants": 40}})
labels = oracle.association_labels(harness.build_instance(cfg, seed=5))

times = np.arange(labels.instants - 1)
train_times = np.asarray(split_train_test(times, 0.5)[0])
norm = labels.normalizer(train_times)
data = labels.datasets(0, norm, train_times)
print("samples held per HAB:", [ds.size for ds in data])

# training stops once the duality gap and the Omega change are below 1e-6
state, trace = fedsvm.train(data, cfg.hyper(), iterations=500, tol=1e-6)
print(f"{len(trace)} rounds, final gap {trace.gap[-1]:.2e}")
print("task relationship Omega:\n", np.round(state.omega, 3))

# the centralized solver holds every sample and should agree
glob = harness.baseline_global(data, cfg.hyper())
print(f"federated primal {trace.primal[-1]:.6f} vs centralized {glob.objective:.6f}")

# the geometric envelope on the dual, with D* from a longer run
_, long = fedsvm.train(data, cfg.hyper(), iterations=5000)
print(fedsvm.convergence_bound_check(trace, long.dual[-1], cfg.hyper()).message)
