"""Client-side fusion: a random forest over modality predictions, plus an
exact Shapley engine that scores each modality's impact on the forest.

The forest's input row is the vector of per-modality predicted classes for
one sample. Categorical values are handled as one-hot indicator splits
("is modality m's prediction equal to class c?"), so no ordinal structure
is imposed on class indices.

Shapley values use the exact subset-weighted sum over all ``2^M`` modality
coalitions. A coalition is evaluated interventionally: coalition columns
come from an evaluation sample, the remaining columns are marginalised
over a background sample, and the payoff is the mean correct-classification
indicator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, DataError, DimensionError
from .seeding import make_rng

MAX_EXACT_MODALITIES = 16
DEFAULT_NUM_TREES = 20
DEFAULT_MAX_DEPTH = 6
DEFAULT_SHAPLEY_SAMPLES = 50


@dataclass(frozen=True)
class DecisionTree:
    """Array-encoded binary tree. ``feature[i] < 0`` marks a leaf.

    An internal node sends rows with ``x[:, feature] == value`` left.
    """

    feature: np.ndarray
    value: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                break
            rows = np.nonzero(active)[0]
            goes_left = x[rows, feat[rows]] == self.value[node[rows]]
            node[rows] = np.where(goes_left, self.left[node[rows]], self.right[node[rows]])
        return self.leaf_class[node]

    def splits_on(self, modality: int) -> bool:
        return bool(np.any(self.feature == modality))


@dataclass(frozen=True)
class EnsembleModel:
    """Majority-vote forest over categorical modality predictions."""

    trees: tuple[DecisionTree, ...]
    num_trees: int
    max_depth: int
    feature_count: int
    num_classes: int
    seed: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        return ensemble_predict(self, x)


@dataclass(frozen=True)
class ShapleyReport:
    """Per-modality impact of the forest's inputs.

    ``per_modality`` holds the signed mean over evaluation samples;
    ``magnitudes`` its absolute values (or the mean of per-sample absolute
    values when the engine is asked for that aggregation).
    ``per_sample`` is the (samples x modalities) matrix before averaging.
    """

    per_modality: np.ndarray
    magnitudes: np.ndarray
    eval_sample_count: int
    background_sample_count: int
    per_sample: np.ndarray = field(repr=False)


class _TreeArrays:
    """Mutable node storage for one growing tree."""

    __slots__ = ("feature", "value", "left", "right", "leaf_class")

    def __init__(self):
        self.feature: list[int] = []
        self.value: list[int] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.leaf_class: list[int] = []

    def new_node(self) -> int:
        self.feature.append(-1)
        self.value.append(-1)
        self.left.append(-1)
        self.right.append(-1)
        self.leaf_class.append(-1)
        return len(self.feature) - 1

    def freeze(self) -> DecisionTree:
        return DecisionTree(
            feature=np.asarray(self.feature, dtype=np.int64),
            value=np.asarray(self.value, dtype=np.int64),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            leaf_class=np.asarray(self.leaf_class, dtype=np.int64),
        )


def _grow_forest(rows: np.ndarray, boot_counts: np.ndarray, max_depth: int,
                 num_classes: int, num_features: int,
                 split_rng: np.random.Generator) -> list[DecisionTree]:
    """Grow every tree of the forest level-synchronously.

    ``rows`` holds the distinct categorical rows; ``boot_counts`` stacks one
    bootstrap class-count matrix per tree. Each depth level scores every
    open (tree, node) slot's candidate splits with one batched bincount;
    ties resolve to the lowest candidate modality, then the lowest value.
    """
    c = num_classes
    n_cand = max(1, math.ceil(math.sqrt(num_features)))
    num_trees, num_rows, _ = boot_counts.shape
    trees = [_TreeArrays() for _ in range(num_trees)]

    # slot_of[t, u] = index into the current level's open slots; -1 settled.
    slot_of = np.full((num_trees, num_rows), -1, dtype=np.int64)
    slots: list[tuple[int, int]] = []
    for t, tree in enumerate(trees):
        present = boot_counts[t].sum(axis=1) > 0
        slot_of[t, present] = len(slots)
        slots.append((t, tree.new_node()))

    for depth in range(max_depth + 1):
        if not slots:
            break
        n_slots = len(slots)
        t_idx, u_idx = np.nonzero(slot_of >= 0)
        li = slot_of[t_idx, u_idx]
        rows_l = rows[u_idx]
        counts_l = boot_counts[t_idx, u_idx]

        class_tot = np.bincount(
            (li[:, None] * c + np.arange(c)).ravel(),
            weights=counts_l.ravel(), minlength=n_slots * c,
        ).reshape(n_slots, c)
        leaf_cls = class_tot.argmax(axis=1)
        must_leaf = (depth >= max_depth) | ((class_tot > 0).sum(axis=1) <= 1)

        split_feat = np.full(n_slots, -1, dtype=np.int64)
        split_val = np.full(n_slots, -1, dtype=np.int64)
        if not must_leaf.all():
            cand = np.sort(np.argpartition(split_rng.random((n_slots, num_features)),
                                           n_cand - 1, axis=1)[:, :n_cand], axis=1)
            vals = np.take_along_axis(rows_l, cand[li], axis=1)  # (live, n_cand)
            idx = ((li[:, None] * n_cand + np.arange(n_cand)) * c + vals)[:, :, None] * c + np.arange(c)
            weights = np.broadcast_to(counts_l[:, None, :], idx.shape)
            agg = np.bincount(idx.ravel(), weights=weights.ravel(),
                              minlength=n_slots * n_cand * c * c).reshape(n_slots, n_cand, c, c)
            left_tot = agg.sum(axis=3)
            right_counts = class_tot[:, None, None, :] - agg
            right_tot = class_tot.sum(axis=1)[:, None, None] - left_tot
            valid = (left_tot > 0) & (right_tot > 0)
            # Weighted Gini minimization == maximizing per-child purity sums.
            purity = (agg * agg).sum(axis=3) / np.maximum(left_tot, 1.0)
            purity += (right_counts * right_counts).sum(axis=3) / np.maximum(right_tot, 1.0)
            score = np.where(valid, -purity, np.inf).reshape(n_slots, n_cand * c)
            best = np.argmin(score, axis=1)
            splittable = np.isfinite(score[np.arange(n_slots), best]) & ~must_leaf
            split_feat = np.where(splittable, cand[np.arange(n_slots), best // c], -1)
            split_val = np.where(splittable, best % c, -1)

        next_slots: list[tuple[int, int]] = []
        child_slot = np.full((n_slots, 2), -1, dtype=np.int64)
        for s, (t, node) in enumerate(slots):
            tree = trees[t]
            if split_feat[s] < 0:
                tree.leaf_class[node] = int(leaf_cls[s])
            else:
                tree.feature[node] = int(split_feat[s])
                tree.value[node] = int(split_val[s])
                tree.left[node] = tree.new_node()
                tree.right[node] = tree.new_node()
                child_slot[s, 0] = len(next_slots)
                child_slot[s, 1] = len(next_slots) + 1
                next_slots.append((t, tree.left[node]))
                next_slots.append((t, tree.right[node]))

        if next_slots:
            feat_of = split_feat[li]
            picked = np.take_along_axis(rows_l, np.maximum(feat_of, 0)[:, None], axis=1)[:, 0]
            side = np.where(picked == split_val[li], 0, 1)
            slot_of[t_idx, u_idx] = child_slot[li, side]
        else:
            slot_of[t_idx, u_idx] = -1
        slots = next_slots

    return [tree.freeze() for tree in trees]


def _validate_predictions(predictions: np.ndarray, num_classes: int) -> np.ndarray:
    predictions = np.asarray(predictions, dtype=np.int64)
    if predictions.ndim == 1:
        predictions = predictions[None, :]
    if predictions.ndim != 2:
        raise DimensionError(f"expected a 2-d prediction matrix, got ndim={predictions.ndim}")
    if predictions.size and (predictions.min() < 0 or predictions.max() >= num_classes):
        raise DimensionError("prediction values outside [0, num_classes)")
    return predictions


def fit_ensemble(
    predictions: np.ndarray,
    labels: np.ndarray,
    num_trees: int = DEFAULT_NUM_TREES,
    max_depth: int = DEFAULT_MAX_DEPTH,
    seed: int = 0,
    num_classes: int | None = None,
) -> EnsembleModel:
    """Fit a seeded random forest on categorical modality predictions.

    Each tree sees a bootstrap resample and considers ``ceil(sqrt(M))``
    candidate modalities per node, choosing the greedy Gini-best one-hot
    split. Fitting is deterministic given data, hyperparameters and seed.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.ndim != 2 or predictions.shape[0] == 0:
        raise DataError("fit_ensemble needs a nonempty 2-d prediction matrix")
    if labels.shape != (predictions.shape[0],):
        raise DataError("labels do not align with prediction rows")
    if num_classes is None:
        num_classes = int(max(predictions.max(initial=0), labels.max())) + 1
    predictions = _validate_predictions(predictions, num_classes)

    n, m = predictions.shape
    rows, inverse = np.unique(predictions, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()  # numpy 2.0 returned shape (n, 1)
    counts = np.zeros((rows.shape[0], num_classes), dtype=np.float64)
    np.add.at(counts, (inverse, labels), 1.0)
    cell_probs = counts.ravel() / n

    children = np.random.SeedSequence(seed).spawn(num_trees + 1)
    boots = np.stack([
        np.random.Generator(np.random.Philox(child))
        .multinomial(n, cell_probs).reshape(counts.shape).astype(np.float64)
        for child in children[:num_trees]
    ])
    split_rng = np.random.Generator(np.random.Philox(children[num_trees]))
    trees = _grow_forest(rows, boots, max_depth, num_classes, m, split_rng)
    return EnsembleModel(tuple(trees), num_trees, max_depth, m, num_classes, seed)


def ensemble_predict(ensemble: EnsembleModel, predictions: np.ndarray) -> np.ndarray:
    """Majority vote across trees; vote ties go to the lowest class index."""
    x = _validate_predictions(np.asarray(predictions), ensemble.num_classes)
    if x.shape[1] != ensemble.feature_count:
        raise DimensionError(
            f"expected {ensemble.feature_count} modality columns, got {x.shape[1]}"
        )
    votes = np.zeros((x.shape[0], ensemble.num_classes), dtype=np.int64)
    row_idx = np.arange(x.shape[0])
    for tree in ensemble.trees:
        votes[row_idx, tree.predict(x)] += 1
    return np.argmax(votes, axis=1)


def _encode(rows: np.ndarray, num_classes: int) -> np.ndarray | None:
    """Pack categorical rows into single integers when that fits in int64."""
    m = rows.shape[1]
    if num_classes**m > 2**62:
        return None
    weights = num_classes ** np.arange(m, dtype=np.int64)
    return rows @ weights


def _decode(ids: np.ndarray, m: int, num_classes: int) -> np.ndarray:
    out = np.empty((ids.shape[0], m), dtype=np.int64)
    rest = ids.copy()
    for col in range(m):
        out[:, col] = rest % num_classes
        rest //= num_classes
    return out


def _coalition_matrix(
    ensemble: EnsembleModel,
    eval_samples: np.ndarray,
    background: np.ndarray,
    target_labels: np.ndarray,
) -> np.ndarray:
    """Per-sample payoff of every coalition: array of shape (2^M, s).

    Entry ``[Y, i]`` is the background-marginalised correct-classification
    rate of evaluation row ``i`` when only coalition ``Y`` (a bitmask over
    modalities) keeps its observed values.
    """
    m = ensemble.feature_count
    c = ensemble.num_classes
    s, b = eval_samples.shape[0], background.shape[0]
    values = np.empty((1 << m, s), dtype=np.float64)
    encoded = _encode(eval_samples, c)
    use_ids = encoded is not None
    if use_ids:
        weights = c ** np.arange(m, dtype=np.int64)
        eval_terms = eval_samples * weights
        bg_terms = background * weights
        # With a small categorical universe, predict each possible row once
        # and reduce every coalition to table lookups.
        table = None
        if c**m <= 4096:
            table = ensemble_predict(ensemble, _decode(np.arange(c**m, dtype=np.int64), m, c))
    for coalition in range(1 << m):
        member = np.array([(coalition >> j) & 1 for j in range(m)], dtype=bool)
        if use_ids:
            ids = eval_terms[:, member].sum(axis=1)[:, None] + bg_terms[:, ~member].sum(axis=1)[None, :]
            if table is not None:
                correct = table[ids] == target_labels[:, None]
                values[coalition] = correct.mean(axis=1)
                continue
            unique_ids, inverse = np.unique(ids.ravel(), return_inverse=True)
            preds = ensemble_predict(ensemble, _decode(unique_ids, m, c))
        else:
            hybrid = np.repeat(background[None, :, :], s, axis=0)
            hybrid[:, :, member] = eval_samples[:, None, member]
            flat = hybrid.reshape(s * b, m)
            unique_rows, inverse = np.unique(flat, axis=0, return_inverse=True)
            inverse = np.asarray(inverse).ravel()
            preds = ensemble_predict(ensemble, unique_rows)
        correct = preds[inverse].reshape(s, b) == target_labels[:, None]
        values[coalition] = correct.mean(axis=1)
    return values


def _subset_weights(m: int) -> np.ndarray:
    fact = [math.factorial(i) for i in range(m + 1)]
    return np.array([fact[size] * fact[m - size - 1] / fact[m] for size in range(m)])


def shapley_from_coalition_values(values: np.ndarray, m: int) -> np.ndarray:
    """Exact subset-form Shapley values from a (2^M, ...) payoff table.

    ``values[Y]`` is the payoff of the coalition whose bitmask is ``Y``.
    Returns an array of shape ``(M, ...)``.
    """
    weights = _subset_weights(m)
    sizes = np.array([bin(y).count("1") for y in range(1 << m)])
    out = np.zeros((m,) + values.shape[1:], dtype=np.float64)
    for coalition in range(1 << m):
        for j in range(m):
            if coalition & (1 << j):
                continue
            w = weights[sizes[coalition]]
            out[j] += w * (values[coalition | (1 << j)] - values[coalition])
    return out


def coalition_value(
    ensemble: EnsembleModel,
    coalition: set[int] | frozenset[int] | tuple[int, ...] | list[int],
    eval_samples: np.ndarray,
    background: np.ndarray,
    target_labels: np.ndarray,
) -> float:
    """Interventional payoff of one modality coalition.

    Coalition columns come from each evaluation row; the rest are replaced
    by every background row in turn. The payoff is the mean over evaluation
    rows and background rows of the correct-classification indicator.
    """
    eval_samples = _validate_predictions(np.asarray(eval_samples), ensemble.num_classes)
    background = _validate_predictions(np.asarray(background), ensemble.num_classes)
    target_labels = np.asarray(target_labels, dtype=np.int64)
    if eval_samples.shape[0] == 0:
        raise DataError("coalition_value needs at least one evaluation row")
    if background.shape[0] == 0:
        raise DataError("coalition_value needs at least one background row")
    m = ensemble.feature_count
    if eval_samples.shape[1] != m or background.shape[1] != m:
        raise DimensionError("sample width does not match the ensemble's modality count")
    member = np.zeros(m, dtype=bool)
    for j in coalition:
        member[j] = True
    s, b = eval_samples.shape[0], background.shape[0]
    hybrid = np.repeat(background[None, :, :], s, axis=0)
    hybrid[:, :, member] = eval_samples[:, None, member]
    preds = ensemble_predict(ensemble, hybrid.reshape(s * b, m)).reshape(s, b)
    return float((preds == target_labels[:, None]).mean())


def shapley_exact(
    ensemble: EnsembleModel,
    eval_samples: np.ndarray,
    background: np.ndarray,
    target_labels: np.ndarray,
    seed: int = 0,
    max_eval_samples: int = DEFAULT_SHAPLEY_SAMPLES,
    mean_of_abs: bool = False,
) -> ShapleyReport:
    """Exact per-modality Shapley values of the forest's payoff.

    Enumerates all ``2^M`` coalitions (``M <= 16``), computing the
    interventional payoff per evaluation sample, then the subset-weighted
    marginal contributions. Evaluation rows beyond ``max_eval_samples`` are
    reduced by a seeded uniform subsample. The default magnitude set is
    ``|mean over samples|``; ``mean_of_abs=True`` reports the mean of
    per-sample absolute values instead.
    """
    m = ensemble.feature_count
    if m > MAX_EXACT_MODALITIES:
        raise CapabilityError(
            f"exact enumeration supports at most {MAX_EXACT_MODALITIES} modalities, got {m}; "
            "a sampled estimator is out of scope here"
        )
    eval_samples = _validate_predictions(np.asarray(eval_samples), ensemble.num_classes)
    background = _validate_predictions(np.asarray(background), ensemble.num_classes)
    target_labels = np.asarray(target_labels, dtype=np.int64)
    if eval_samples.shape[0] == 0:
        raise DataError("shapley_exact needs at least one evaluation row")
    if background.shape[0] == 0:
        raise DataError("shapley_exact needs at least one background row")
    if eval_samples.shape[0] > max_eval_samples:
        keep = np.sort(make_rng(seed).choice(eval_samples.shape[0], size=max_eval_samples, replace=False))
        eval_samples = eval_samples[keep]
        target_labels = target_labels[keep]

    values = _coalition_matrix(ensemble, eval_samples, background, target_labels)
    per_sample = shapley_from_coalition_values(values, m).T
    per_modality = per_sample.mean(axis=0)
    if mean_of_abs:
        magnitudes = np.abs(per_sample).mean(axis=0)
    else:
        magnitudes = np.abs(per_modality)
    return ShapleyReport(
        per_modality=per_modality,
        magnitudes=magnitudes,
        eval_sample_count=eval_samples.shape[0],
        background_sample_count=background.shape[0],
        per_sample=per_sample,
    )
