"""Every method on the same data and the same ledger.

The fusion baselines ship a whole fused model per client per round; the
random-submodel uploader ships one component; the selective method ships
only the top-priority modality models of the best-loss clients. Byte
counts come from the exact serialized parameters in every case.
"""

import numpy as np

from fedsel import BaselineKind, DatasetSpec, FederationConfig, ModalitySpec, SelectionConfig, generate
from fedsel import baselines, federation

spec = DatasetSpec(
    num_clients=6,
    modalities=(ModalitySpec(2, 0.85), ModalitySpec(16, 0.85), ModalitySpec(64, 0.85)),
    num_classes=4,
    regime="iid",
    samples_per_client=120,
    seed=2,
)
datasets = generate(spec)
config = FederationConfig(selection=SelectionConfig(gamma=1, delta=0.2), master_seed=0)
budget = 10**12  # compare at a fixed number of rounds instead
rounds = 10

runs = {}
server, clients = federation.init_clients(datasets, config, num_classes=4)
runs["selective"] = federation.run_until_budget(server, clients, config, budget, rounds)
runs["random_both"] = baselines.run_ablation(datasets, config, BaselineKind.RANDOM_BOTH,
                                             budget, rounds, num_classes=4)
runs["data_level"] = baselines.run_data_level(datasets, config, budget, rounds, num_classes=4)
runs["feature_level"] = baselines.run_feature_level(datasets, config, budget, rounds, num_classes=4)
runs["decision_level"] = baselines.run_decision_level_baseline(datasets, config, budget, rounds,
                                                               num_classes=4)
runs["random_submodel"] = baselines.run_random_submodel(datasets, config, budget, rounds,
                                                        num_classes=4)

print(f"{'method':<16} {'final acc':>9} {'bytes/round':>12} {'KB total':>9}")
for name, reports in runs.items():
    per_round = np.mean([r.bytes_this_round for r in reports])
    print(f"{name:<16} {reports[-1].mean_accuracy:>9.3f} {per_round:>12.0f} "
          f"{reports[-1].cumulative_bytes / 1024:>9.1f}")

dense = np.mean([r.bytes_this_round for r in runs["decision_level"]])
lean = np.mean([r.bytes_this_round for r in runs["selective"]])
print(f"\nselective uploads {dense / lean:.1f}x fewer bytes per round "
      f"than the decision-level baseline")
