"""
Comparing federated, local and global models
============================================

Run a few repetitions of the full pipeline: oracle labels, training, then
prediction, repair and scheduling on held-out instants. The oracle row is
the lower bound every method is scored against.
"""

from habmec import harness
from habmec.config import Config

# a small mobile setup keeps this under a minute
cfg = Config({"scenario": {"users": 5, "habs": 3, "mobility": True, "speed": 150.0},
              "traffic": {"instants": 30}, "experiment": {"reps": 4}})
report = harness.run_experiment(cfg)

for method in harness.ALL_METHODS:
    print(f"{method:>6}: accuracy {report.method_mean(method, 'accuracy'):.3f}, "
          f"utility {report.method_mean(method, 'utility'):.4f}")
print("oracle never beaten:", report.oracle_ok)
