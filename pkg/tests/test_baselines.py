"""Fusion baselines, the random-submodel uploader, and the ablations."""

from collections import Counter

import numpy as np
import pytest

from fedsel import baselines as base, data, federation as fed, models as mod, selection as sel
from fedsel.errors import DataError
from fedsel.seeding import derive_seed


def make_datasets(num_clients=4, dims=(2, 5), num_classes=3, samples=60, seed=0,
                  informativeness=0.8):
    spec = data.DatasetSpec(
        num_clients=num_clients,
        modalities=tuple(data.ModalitySpec(d, informativeness) for d in dims),
        num_classes=num_classes,
        regime="iid",
        samples_per_client=samples,
        seed=seed,
    )
    return data.generate(spec)


def make_config(**kwargs):
    sel_kwargs = {}
    for key in ("gamma", "delta", "alpha_shapley", "alpha_size", "alpha_recency", "loss_direction"):
        if key in kwargs:
            sel_kwargs[key] = kwargs.pop(key)
    return fed.FederationConfig(selection=sel.SelectionConfig(**sel_kwargs), **kwargs)


def xor_datasets(num_clients=2, n=240, seed=0):
    """Two one-dimensional modalities; the label is their sign XOR."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(num_clients):
        x1 = rng.choice([-1.0, 1.0], size=n) + rng.normal(0, 0.2, n)
        x2 = rng.choice([-1.0, 1.0], size=n) + rng.normal(0, 0.2, n)
        y = ((x1 > 0) ^ (x2 > 0)).astype(np.int64)
        cut = int(0.75 * n)
        out.append(data.ClientDataset(
            client_id=k,
            train_features={0: x1[:cut, None], 1: x2[:cut, None]},
            test_features={0: x1[cut:, None], 1: x2[cut:, None]},
            train_labels=y[:cut],
            test_labels=y[cut:],
        ))
    return out


class TestDataLevel:
    def test_fused_byte_size(self):
        datasets = make_datasets(dims=(2, 16, 64), num_classes=4)
        config = make_config(master_seed=1)
        reports = base.run_data_level(datasets, config, budget_bytes=1e12,
                                      max_rounds=1, num_classes=4)
        per_upload = {u.nbytes for u in reports[0].uploads}
        assert per_upload == {(82 + 1) * 4 * 4}
        assert (82 + 1) * 4 * 4 == 1328
        assert reports[0].bytes_this_round == 4 * 1328

    def test_single_modality_reduces_to_fedavg(self):
        datasets = make_datasets(dims=(5,), num_classes=3)
        config = make_config(master_seed=2)
        reports = base.run_data_level(datasets, config, budget_bytes=1e12,
                                      max_rounds=2, num_classes=3)
        # hand-rolled FedAvg over the same models and seeds
        counts = np.array([d.train_labels.shape[0] for d in datasets], dtype=np.float64)
        weights = counts / counts.sum()
        current = mod.init_model(config.arch, 5, 3, seed=derive_seed(config.master_seed, "fused-init"))
        for t in (1, 2):
            locals_ = []
            for d in datasets:
                trained, _ = mod.train_local(
                    current, d.train_features[0], d.train_labels,
                    config.epochs, config.batch_size, config.learning_rate,
                    seed=derive_seed(config.master_seed, t, "train", d.client_id))
                locals_.append(trained)
            current = mod.weighted_sum(locals_, weights)
        accs = []
        for d in datasets:
            accs.append((mod.predict(current, d.test_features[0]) == d.test_labels).mean())
        assert reports[-1].mean_accuracy == pytest.approx(np.mean(accs), abs=1e-12)

    def test_joint_only_separable_needs_fusion(self):
        datasets = xor_datasets()
        config = make_config(master_seed=3, arch=mod.Mlp1(16), epochs=5)
        reports = base.run_data_level(datasets, config, budget_bytes=1e12,
                                      max_rounds=30, num_classes=2)
        fused_acc = reports[-1].mean_accuracy
        # best single modality, trained far past convergence
        single_best = 0.0
        for m in (0, 1):
            x = np.vstack([d.train_features[m] for d in datasets])
            y = np.concatenate([d.train_labels for d in datasets])
            model = mod.init_model(mod.LinearSoftmax(), 1, 2, seed=4)
            trained, _ = mod.train_local(model, x, y, 80, 32, 0.3, seed=5)
            xt = np.vstack([d.test_features[m] for d in datasets])
            yt = np.concatenate([d.test_labels for d in datasets])
            single_best = max(single_best, (mod.predict(trained, xt) == yt).mean())
        assert fused_acc >= single_best
        assert fused_acc > 0.9


class TestStacks:
    def test_feature_level_byte_formula(self):
        dims = (2, 16, 64)
        h, c = 8, 4
        datasets = make_datasets(dims=dims, num_classes=c)
        config = make_config(master_seed=1)
        reports = base.run_feature_level(datasets, config, budget_bytes=1e12,
                                         max_rounds=1, num_classes=c, hidden_units=h)
        expected = 4 * (sum((d + 1) * h for d in dims) + (len(dims) * h + 1) * c)
        assert {u.nbytes for u in reports[0].uploads} == {expected}

    def test_decision_level_byte_formula(self):
        dims = (2, 16, 64)
        c = 4
        datasets = make_datasets(dims=dims, num_classes=c)
        config = make_config(master_seed=1)
        reports = base.run_decision_level_baseline(datasets, config, budget_bytes=1e12,
                                                   max_rounds=1, num_classes=c)
        expected = 4 * (sum((d + 1) * c for d in dims) + (len(dims) * c + 1) * c)
        assert {u.nbytes for u in reports[0].uploads} == {expected}
        assert expected == base.decision_level_bytes(list(dims), c)

    def test_stack_learns_linearly_separable_data(self):
        datasets = make_datasets(dims=(4, 6), num_classes=3, informativeness=1.0, samples=120)
        config = make_config(master_seed=5)
        reports = base.run_feature_level(datasets, config, budget_bytes=1e12,
                                         max_rounds=12, num_classes=3)
        assert reports[-1].mean_accuracy > 0.9

    def test_decision_level_uploads_dwarf_selective(self):
        dims = (6, 6, 6)
        datasets = make_datasets(num_clients=5, dims=dims, num_classes=3)
        config = make_config(gamma=1, delta=0.2, master_seed=6)
        selective_server, selective_clients = fed.init_clients(datasets, config, num_classes=3)
        selective = fed.run_until_budget(selective_server, selective_clients, config,
                                         budget_bytes=1e12, max_rounds=1)
        dense = base.run_decision_level_baseline(datasets, config, budget_bytes=1e12,
                                                 max_rounds=1, num_classes=3)
        gamma_delta_factor = len(dims) / (1 * 0.2)
        assert dense[0].bytes_this_round >= gamma_delta_factor * selective[0].bytes_this_round

    def test_feature_level_capacity_covers_data_level(self):
        # With h >= C the linear encoders can express the plain fused model.
        datasets = make_datasets(dims=(4, 6), num_classes=3, informativeness=1.0, samples=150)
        config = make_config(master_seed=14)
        dense = base.run_feature_level(datasets, config, budget_bytes=1e12,
                                       max_rounds=12, num_classes=3, hidden_units=8)
        flat = base.run_data_level(datasets, config, budget_bytes=1e12,
                                   max_rounds=12, num_classes=3)
        assert dense[-1].mean_accuracy >= flat[-1].mean_accuracy - 0.02

    def test_m1_feature_level_is_one_hidden_layer(self):
        stack = base.init_stack((5,), (8,), 3, seed=0)
        assert stack.params.size == (5 + 1) * 8 + (8 + 1) * 3
        assert len(stack.segments()) == 2  # one encoder, one head

    def test_m1_decision_level_is_two_layer_classifier(self):
        stack = base.init_stack((5,), (3,), 3, seed=0)
        assert stack.params.size == (5 + 1) * 3 + (3 + 1) * 3

    def test_byte_ordering_selective_submodel_dense(self):
        # Per-round bytes: selective < random submodel < decision-level.
        dims = (4, 4, 4)
        datasets = make_datasets(num_clients=5, dims=dims, num_classes=3)
        config = make_config(gamma=1, delta=0.2, master_seed=15)
        server, clients = fed.init_clients(datasets, config, num_classes=3)
        lean = fed.run_until_budget(server, clients, config, 1e12, 3)
        submodel = base.run_random_submodel(datasets, config, 1e12, 3, num_classes=3)
        dense = base.run_decision_level_baseline(datasets, config, 1e12, 3, num_classes=3)
        lean_bytes = np.mean([r.bytes_this_round for r in lean])
        sub_bytes = np.mean([r.bytes_this_round for r in submodel])
        dense_bytes = np.mean([r.bytes_this_round for r in dense])
        assert lean_bytes < sub_bytes < dense_bytes

    def test_stack_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        stack = base.init_stack((3, 2), (4, 4), 3, seed=1)
        x = rng.normal(size=(6, 5))
        y = rng.integers(0, 3, size=6)
        loss, grad = base._stack_gradient(stack, x, y)
        eps = 1e-6
        for idx in rng.choice(stack.params.size, size=12, replace=False):
            bumped = stack.params.copy()
            bumped[idx] += eps
            up, _ = base._stack_gradient(stack.with_params(bumped), x, y)
            bumped[idx] -= 2 * eps
            down, _ = base._stack_gradient(stack.with_params(bumped), x, y)
            numeric = (up - down) / (2 * eps)
            assert grad[idx] == pytest.approx(numeric, abs=1e-5)


class TestRandomSubmodel:
    def test_component_bytes_and_ledger(self):
        dims = (2, 5)
        c = 3
        datasets = make_datasets(dims=dims, num_classes=c)
        config = make_config(master_seed=7)
        reports = base.run_random_submodel(datasets, config, budget_bytes=1e12,
                                           max_rounds=4, num_classes=c)
        head_bytes = {(d + 1) * c * 4 for d in dims}
        fusion_bytes = (len(dims) * c + 1) * c * 4
        allowed = head_bytes | {fusion_bytes}
        for r in reports:
            assert len(r.uploads) == len(datasets)  # one component per client
            assert {u.nbytes for u in r.uploads} <= allowed

    def test_frequencies_roughly_uniform(self):
        datasets = make_datasets(num_clients=10, dims=(2,) * 6, num_classes=2, samples=20)
        config = make_config(master_seed=8, epochs=1)
        reports = base.run_random_submodel(datasets, config, budget_bytes=1e12,
                                           max_rounds=150, num_classes=2)
        counts = Counter(u.modality for r in reports for u in r.uploads)
        total = sum(counts.values())
        assert total == 10 * 150
        for comp in range(7):
            assert abs(counts[comp] / total - 1 / 7) < 0.05

    def test_expected_fraction_helper(self):
        assert base.expected_submodel_fraction(6) == pytest.approx(1 / 7)


class TestAblations:
    def test_random_both_degenerates_to_selective_when_everything_selected(self):
        datasets = make_datasets(num_clients=3, dims=(2, 4))
        config = make_config(gamma=2, delta=1.0, master_seed=9)
        ablation = base.run_ablation(datasets, config, base.BaselineKind.RANDOM_BOTH,
                                     budget_bytes=1e12, max_rounds=3, num_classes=3)
        server, clients = fed.init_clients(datasets, config, num_classes=3)
        selective = fed.run_until_budget(server, clients, config, budget_bytes=1e12, max_rounds=3)
        for ra, rs in zip(ablation, selective):
            assert ra.mean_accuracy == rs.mean_accuracy
            assert [(u.client, u.modality, u.nbytes) for u in ra.uploads] == \
                   [(u.client, u.modality, u.nbytes) for u in rs.uploads]

    def test_random_modality_frequency(self):
        datasets = make_datasets(num_clients=4, dims=(2, 3, 4), samples=40)
        config = make_config(gamma=1, delta=1.0, master_seed=10, epochs=1)
        reports = base.run_ablation(datasets, config, base.BaselineKind.RANDOM_MODALITY,
                                    budget_bytes=1e12, max_rounds=120, num_classes=3)
        counts = Counter(m for r in reports for c in r.modality_choices.values() for m in c.selected)
        total = sum(counts.values())
        for m in range(3):
            assert abs(counts[m] / total - 1 / 3) < 0.07

    def test_random_client_frequency(self):
        datasets = make_datasets(num_clients=5, dims=(3,), samples=40)
        config = make_config(gamma=1, delta=0.4, master_seed=11, epochs=1)
        reports = base.run_ablation(datasets, config, base.BaselineKind.RANDOM_CLIENT,
                                    budget_bytes=1e12, max_rounds=150, num_classes=3)
        counts = Counter(u.client for r in reports for u in r.uploads)
        for k in range(5):
            share = counts[k] / len(reports)
            assert abs(share - 0.4) < 0.1

    def test_ablation_still_reports_shapley(self):
        datasets = make_datasets(num_clients=3, dims=(2, 4))
        config = make_config(master_seed=12)
        reports = base.run_ablation(datasets, config, base.BaselineKind.RANDOM_BOTH,
                                    budget_bytes=1e12, max_rounds=1, num_classes=3)
        assert all(reports[0].shapley_magnitudes[k] for k in range(3))

    def test_non_ablation_kind_rejected(self):
        datasets = make_datasets(num_clients=2)
        config = make_config(master_seed=0)
        with pytest.raises(DataError):
            base.run_ablation(datasets, config, base.BaselineKind.DATA_LEVEL,
                              budget_bytes=1e6, max_rounds=1)


class TestDeterminism:
    @pytest.mark.parametrize("runner", [
        base.run_data_level, base.run_feature_level,
        base.run_decision_level_baseline, base.run_random_submodel,
    ])
    def test_baselines_deterministic(self, runner):
        datasets = make_datasets(num_clients=3, dims=(2, 4))
        config = make_config(master_seed=13)
        a = runner(datasets, config, budget_bytes=1e12, max_rounds=2, num_classes=3)
        b = runner(datasets, config, budget_bytes=1e12, max_rounds=2, num_classes=3)
        assert [r.mean_accuracy for r in a] == [r.mean_accuracy for r in b]
        assert [(u.client, u.modality, u.nbytes) for r in a for u in r.uploads] == \
               [(u.client, u.modality, u.nbytes) for r in b for u in r.uploads]
