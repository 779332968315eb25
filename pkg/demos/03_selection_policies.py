"""The joint selection mathematics, step by step.

A client ranks modalities by a composite priority:

    P = alpha_shapley * impact~ + alpha_size * (1 - size~) + alpha_recency * staleness~

where impact and size are min-max normalized within the client and
staleness is rounds-since-upload scaled by the current round. The server
then keeps, per modality, the delta-share of offering clients with the
most favourable local losses.
"""

import numpy as np

from fedsel import (
    RecencyTracker,
    SelectionConfig,
    compute_priority,
    mark_uploaded,
    normalize_criteria,
    select_clients,
    select_modalities,
)

config = SelectionConfig(gamma=1, delta=0.2)
print(f"config: gamma={config.gamma} delta={config.delta} "
      f"alphas=({config.alpha_shapley:.3f}, {config.alpha_size:.3f}, {config.alpha_recency:.3f})")

# One client, three modalities: impacts, byte sizes, upload history.
impact = np.array([0.42, 0.10, 0.31])
sizes = np.array([48.0, 272.0, 1040.0])
tracker = RecencyTracker(current_round=6)
mark_uploaded(tracker, [(0, 0)], 6)  # modality 0 travelled this round... last time
tracker.advance()  # now at round 7
recency = np.array([tracker.recency(0, m) for m in range(3)], dtype=float)
print("raw impact ", impact)
print("raw sizes  ", sizes)
print("raw recency", recency)

normalized = normalize_criteria(impact, sizes, recency, tracker.current_round)
priority = compute_priority(normalized, config)
for m in range(3):
    print(f"modality {m}: impact~ {normalized[0][m]:.3f} size~ {normalized[1][m]:.3f} "
          f"staleness~ {normalized[2][m]:.3f} -> priority {priority[m]:.3f}")

choice = select_modalities(priority, config.gamma)
print("offered modalities:", choice.selected)

# Server side: keep the best-loss share of the offering clients.
losses = {0: 0.10, 1: 0.90, 2: 0.50, 3: 0.30, 4: 0.70}
print("lower-loss pick :", select_clients(losses, 0.2, 5, "lower"))
print("higher-loss pick:", select_clients(losses, 0.2, 5, "higher"))
print("seeded random   :", select_clients(losses, 0.2, 5, "random", seed=9))

# Recency is what stops one modality from being uploaded forever: the
# staleness of never-chosen modalities keeps climbing until it outbids
# the incumbent's impact and size advantage.
print("\nstaleness trajectory if modality 1 never uploads again:")
for t in (8, 12, 20, 40):
    tracker.current_round = t
    print(f"  round {t:>2}: staleness~ = {tracker.recency(0, 1) / t:.3f}")
