"""Unit tests for the fusion forest and coalition payoffs."""

import numpy as np
import pytest

from fedsel import ensemble as ens
from fedsel.errors import DataError, DimensionError


def constant_tree(cls):
    return ens.DecisionTree(
        feature=np.array([-1]), value=np.array([-1]),
        left=np.array([-1]), right=np.array([-1]),
        leaf_class=np.array([cls]),
    )


def split_on_feature_zero():
    # pred[0] == 1 -> class 1, else class 0
    return ens.DecisionTree(
        feature=np.array([0, -1, -1]), value=np.array([1, -1, -1]),
        left=np.array([1, -1, -1]), right=np.array([2, -1, -1]),
        leaf_class=np.array([-1, 1, 0]),
    )


class TestFit:
    def test_perfectly_informative_feature(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 4, size=50)
        preds = np.stack([labels, rng.integers(0, 4, size=50)], axis=1)
        forest = ens.fit_ensemble(preds, labels, num_trees=10, max_depth=3, seed=2, num_classes=4)
        assert (ens.ensemble_predict(forest, preds) == labels).mean() == 1.0

    def test_depth_zero_stump_is_bootstrap_majority(self):
        rng = np.random.default_rng(0)
        labels = np.array([2] * 45 + [0] * 3 + [1] * 2)
        preds = rng.integers(0, 3, size=(50, 2))
        forest = ens.fit_ensemble(preds, labels, num_trees=1, max_depth=0, seed=9, num_classes=3)
        tree = forest.trees[0]
        assert tree.feature.size == 1 and tree.feature[0] == -1
        assert np.all(ens.ensemble_predict(forest, preds) == tree.leaf_class[0])
        assert tree.leaf_class[0] == 2  # overwhelming majority survives any bootstrap

    def test_fit_determinism(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 3, size=80)
        preds = rng.integers(0, 3, size=(80, 4))
        probe = rng.integers(0, 3, size=(40, 4))
        a = ens.fit_ensemble(preds, labels, num_trees=8, max_depth=4, seed=7, num_classes=3)
        b = ens.fit_ensemble(preds, labels, num_trees=8, max_depth=4, seed=7, num_classes=3)
        assert np.array_equal(ens.ensemble_predict(a, probe), ens.ensemble_predict(b, probe))

    def test_empty_data_rejected(self):
        with pytest.raises(DataError):
            ens.fit_ensemble(np.zeros((0, 2), dtype=int), np.zeros(0, dtype=int))

    def test_internal_nodes_split_on_valid_features(self):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, 4, size=100)
        preds = rng.integers(0, 4, size=(100, 5))
        forest = ens.fit_ensemble(preds, labels, num_trees=6, max_depth=5, seed=0, num_classes=4)
        for tree in forest.trees:
            internal = tree.feature >= 0
            assert np.all(tree.feature[internal] < 5)
            leaves = ~internal
            assert np.all(tree.leaf_class[leaves] >= 0)
            assert np.all(tree.leaf_class[leaves] < 4)


class TestPredict:
    def test_unanimous_stumps(self):
        forest = ens.EnsembleModel((constant_tree(2),) * 3, 3, 0, 2, 4, seed=0)
        x = np.zeros((5, 2), dtype=int)
        assert np.all(ens.ensemble_predict(forest, x) == 2)

    def test_majority_vote(self):
        trees = (constant_tree(0), constant_tree(1), constant_tree(1))
        forest = ens.EnsembleModel(trees, 3, 0, 2, 3, seed=0)
        assert ens.ensemble_predict(forest, np.zeros((1, 2), dtype=int))[0] == 1

    def test_vote_tie_goes_to_lowest_class(self):
        trees = (constant_tree(0), constant_tree(0), constant_tree(1), constant_tree(1))
        forest = ens.EnsembleModel(trees, 4, 0, 2, 3, seed=0)
        assert ens.ensemble_predict(forest, np.zeros((1, 2), dtype=int))[0] == 0

    def test_width_mismatch(self):
        forest = ens.EnsembleModel((constant_tree(0),), 1, 0, 3, 2, seed=0)
        with pytest.raises(DimensionError):
            ens.ensemble_predict(forest, np.zeros((2, 2), dtype=int))

    def test_single_row_input(self):
        forest = ens.EnsembleModel((split_on_feature_zero(),), 1, 1, 2, 2, seed=0)
        assert ens.ensemble_predict(forest, np.array([1, 0]))[0] == 1
        assert ens.ensemble_predict(forest, np.array([0, 0]))[0] == 0


class TestCoalitionValue:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.forest = ens.EnsembleModel((split_on_feature_zero(),), 1, 1, 2, 2, seed=0)
        self.eval = rng.integers(0, 2, size=(10, 2))
        self.background = rng.integers(0, 2, size=(8, 2))
        self.targets = rng.integers(0, 2, size=10)

    def test_full_coalition_is_plain_accuracy(self):
        v = ens.coalition_value(self.forest, [0, 1], self.eval, self.background, self.targets)
        direct = (ens.ensemble_predict(self.forest, self.eval) == self.targets).mean()
        assert v == direct

    def test_empty_coalition_constant_ensemble(self):
        forest = ens.EnsembleModel((constant_tree(1),), 1, 0, 2, 2, seed=0)
        v = ens.coalition_value(forest, [], self.eval, self.background, self.targets)
        assert v == (self.targets == 1).mean()

    def test_irrelevant_modality_changes_nothing(self):
        v0 = ens.coalition_value(self.forest, [0], self.eval, self.background, self.targets)
        v01 = ens.coalition_value(self.forest, [0, 1], self.eval, self.background, self.targets)
        assert v0 == v01

    def test_empty_eval_rejected(self):
        with pytest.raises(DataError):
            ens.coalition_value(self.forest, [0], np.zeros((0, 2), dtype=int),
                                self.background, np.zeros(0, dtype=int))

    def test_brute_force_hybrid_oracle(self):
        # Recompute one coalition the slow way: explicit hybrid rows.
        rng = np.random.default_rng(6)
        labels = rng.integers(0, 3, size=60)
        preds = np.where(rng.random((60, 3)) < 0.7, labels[:, None], rng.integers(0, 3, size=(60, 3)))
        forest = ens.fit_ensemble(preds, labels, num_trees=5, max_depth=4, seed=1, num_classes=3)
        ev, bg, tg = preds[:7], preds[7:19], labels[:7]
        coalition = [0, 2]
        expected = 0.0
        for i in range(ev.shape[0]):
            for j in range(bg.shape[0]):
                hybrid = bg[j].copy()
                hybrid[coalition] = ev[i][coalition]
                pred = ens.ensemble_predict(forest, hybrid[None, :])[0]
                expected += float(pred == tg[i])
        expected /= ev.shape[0] * bg.shape[0]
        got = ens.coalition_value(forest, coalition, ev, bg, tg)
        assert got == pytest.approx(expected, abs=1e-12)
