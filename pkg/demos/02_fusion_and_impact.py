"""Decision-level fusion and per-modality impact.

A client fuses its modality models' predicted classes with a private
random forest, then scores each modality by its exact Shapley value:
the average payoff gain from adding that modality's column across all
coalitions, marginalising missing columns over a background sample.
"""

import numpy as np

from fedsel import coalition_value, ensemble_predict, fit_ensemble, shapley_exact

rng = np.random.default_rng(3)
n, num_classes = 200, 4
labels = rng.integers(0, num_classes, size=n)

# Three modality prediction columns of very different quality:
# 0 is strong, 1 is mediocre, 2 is pure noise.
agreement = [0.8, 0.55, 0.25]
predictions = np.stack([
    np.where(rng.random(n) < p, labels, rng.integers(0, num_classes, size=n))
    for p in agreement
], axis=1)

forest = fit_ensemble(predictions, labels, num_trees=20, max_depth=6, seed=0,
                      num_classes=num_classes)
fused = ensemble_predict(forest, predictions)
print(f"fused training accuracy: {(fused == labels).mean():.3f}")

sample = predictions[:50]
report = shapley_exact(forest, sample, sample, labels[:50], seed=1)
for m, (phi, mag) in enumerate(zip(report.per_modality, report.magnitudes)):
    print(f"modality {m}: agreement {agreement[m]:.2f} -> impact {phi:+.4f} (|.| {mag:.4f})")

# Efficiency: the impacts add up to full-coalition payoff minus baseline.
v_full = coalition_value(forest, [0, 1, 2], sample, sample, labels[:50])
v_empty = coalition_value(forest, [], sample, sample, labels[:50])
print(f"efficiency check: sum(phi) = {report.per_modality.sum():.6f}, "
      f"v(full) - v(empty) = {v_full - v_empty:.6f}")
