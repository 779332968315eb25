"""Per-modality classifiers: training, prediction, and byte accounting.

Each sensing modality gets its own small softmax classifier. The byte
size of a model (4 bytes per parameter) is what the upload selection
later trades off against predictive impact.
"""

import numpy as np

from fedsel import LinearSoftmax, Mlp1, eval_loss, init_model, predict, train_local

rng = np.random.default_rng(0)

# Two Gaussian classes, comfortably separable.
n = 120
features = np.vstack([rng.normal(2.5, 1, size=(n // 2, 6)),
                      rng.normal(-2.5, 1, size=(n // 2, 6))])
labels = np.array([0] * (n // 2) + [1] * (n // 2))

linear = init_model(LinearSoftmax(), input_dim=6, num_classes=2, seed=7)
mlp = init_model(Mlp1(8), input_dim=6, num_classes=2, seed=7)
print(f"linear model: {linear.params.size} params, {linear.byte_size} bytes")
print(f"mlp model:    {mlp.params.size} params, {mlp.byte_size} bytes")

# An untouched model scores exactly ln(C) under uniform softmax.
zero = linear.with_params(np.zeros_like(linear.params))
print(f"untrained loss {eval_loss(zero, features, labels):.6f} "
      f"(ln 2 = {np.log(2):.6f})")

trained, outcome = train_local(linear, features, labels,
                               epochs=30, batch_size=32, learning_rate=0.3, seed=1)
accuracy = (predict(trained, features) == labels).mean()
print(f"after {outcome.epochs_run} epochs: loss {outcome.final_loss:.4f}, "
      f"train accuracy {accuracy:.3f}")

# Same seed, same data: training is bit-reproducible.
again, _ = train_local(linear, features, labels,
                       epochs=30, batch_size=32, learning_rate=0.3, seed=1)
print("bit-identical rerun:", np.array_equal(trained.params, again.params))
