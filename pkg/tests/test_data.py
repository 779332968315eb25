"""Synthetic generator regimes and the CSV loader."""

import numpy as np
import pytest

from fedsel import data, models as mod
from fedsel.errors import AlignmentError, ConfigError, DataError, ParseError, SchemaError


def small_spec(**overrides):
    base = dict(
        num_clients=3,
        modalities=(data.ModalitySpec(2, 0.8), data.ModalitySpec(5, 0.8)),
        num_classes=3,
        regime="iid",
        samples_per_client=120,
        seed=0,
    )
    base.update(overrides)
    return data.DatasetSpec(**base)


class TestGenerate:
    def test_determinism(self):
        a = data.generate(small_spec())
        b = data.generate(small_spec())
        for ca, cb in zip(a, b):
            assert np.array_equal(ca.train_labels, cb.train_labels)
            for m in ca.train_features:
                assert np.array_equal(ca.train_features[m], cb.train_features[m])

    def test_shapes_and_alignment(self):
        clients = data.generate(small_spec())
        for c in clients:
            n_train = c.train_labels.shape[0]
            n_test = c.test_labels.shape[0]
            assert n_train > 0 and n_test > 0
            for m, x in c.train_features.items():
                assert x.shape == (n_train, small_spec().modalities[m].feature_dim)
                assert c.test_features[m].shape[0] == n_test
                assert c.sample_count(m) == n_train

    def test_informative_modality_is_linearly_learnable(self):
        spec = data.DatasetSpec(num_clients=1, modalities=(data.ModalitySpec(6, 1.0),),
                                num_classes=2, regime="iid", samples_per_client=600, seed=0)
        ds = data.generate(spec)[0]
        m = mod.init_model(mod.LinearSoftmax(), 6, 2, seed=1)
        trained, _ = mod.train_local(m, ds.train_features[0], ds.train_labels, 40, 32, 0.2, seed=2)
        acc = (mod.predict(trained, ds.test_features[0]) == ds.test_labels).mean()
        assert acc >= 0.99

    def test_zero_informativeness_carries_no_signal(self):
        spec = data.DatasetSpec(num_clients=1, modalities=(data.ModalitySpec(6, 0.0),),
                                num_classes=4, regime="iid", samples_per_client=800, seed=3)
        ds = data.generate(spec)[0]
        m = mod.init_model(mod.LinearSoftmax(), 6, 4, seed=1)
        trained, _ = mod.train_local(m, ds.train_features[0], ds.train_labels, 30, 32, 0.2, seed=2)
        acc = (mod.predict(trained, ds.test_features[0]) == ds.test_labels).mean()
        assert abs(acc - 0.25) < 0.12

    def test_iid_label_distributions_close_to_pool(self):
        spec = data.DatasetSpec(num_clients=4, modalities=(data.ModalitySpec(3, 0.5),),
                                num_classes=4, regime="iid", samples_per_client=700, seed=5)
        clients = data.generate(spec)
        pooled = np.concatenate([np.concatenate([c.train_labels, c.test_labels]) for c in clients])
        pool_dist = np.bincount(pooled, minlength=4) / pooled.size
        for c in clients:
            mine = np.concatenate([c.train_labels, c.test_labels])
            dist = np.bincount(mine, minlength=4) / mine.size
            assert 0.5 * np.abs(dist - pool_dist).sum() <= 0.1

    def test_iid_every_client_sees_every_class(self):
        clients = data.generate(small_spec(samples_per_client=200))
        for c in clients:
            assert np.unique(c.train_labels).size == 3

    def test_natural_group_heterogeneity_witness(self):
        spec = data.DatasetSpec(
            num_clients=6, modalities=(data.ModalitySpec(8, 0.8),), num_classes=4,
            regime="natural",
            natural=data.NaturalParams(label_concentration=100.0, group_count=2,
                                       group_shift=10.0, sample_log_mean=np.log(300),
                                       sample_log_sigma=0.1),
            seed=7)
        clients = data.generate(spec)
        groups = (np.arange(6) * 2) // 6
        xa = np.vstack([clients[k].train_features[0] for k in range(6) if groups[k] == 0])
        ya = np.concatenate([clients[k].train_labels for k in range(6) if groups[k] == 0])
        xb = np.vstack([clients[k].test_features[0] for k in range(6) if groups[k] == 1])
        yb = np.concatenate([clients[k].test_labels for k in range(6) if groups[k] == 1])
        m = mod.init_model(mod.LinearSoftmax(), 8, 4, seed=1)
        trained, _ = mod.train_local(m, xa, ya, 30, 32, 0.2, seed=2)
        cross_acc = (mod.predict(trained, xb) == yb).mean()
        assert cross_acc < 0.25 + 0.15

    def test_natural_varies_sample_counts(self):
        spec = small_spec(regime="natural",
                          natural=data.NaturalParams(sample_log_mean=np.log(100),
                                                     sample_log_sigma=0.6))
        counts = [c.train_labels.shape[0] for c in data.generate(spec)]
        assert len(set(counts)) > 1

    def test_missing_modalities_leave_at_least_one(self):
        spec = small_spec(missing_modality_rate=0.9, num_clients=12)
        clients = data.generate(spec)
        assert all(len(c.modality_mask) >= 1 for c in clients)
        assert any(len(c.modality_mask) < 2 for c in clients)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ConfigError):
            small_spec(num_clients=0)
        with pytest.raises(ConfigError):
            small_spec(modalities=())
        with pytest.raises(ConfigError):
            small_spec(train_fraction=1.0)
        with pytest.raises(ConfigError):
            small_spec(samples_per_client=2)


def write_csv(path, rows, header="f0,f1,label"):
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")


class TestLoadCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        for k in range(2):
            for m in range(2):
                rows = [
                    f"{rng.normal():.6f},{rng.normal():.6f},{k % 2}"
                    for _ in range(10)
                ]
                # align labels across the client's modalities
                rows = [r.rsplit(',', 1)[0] + f",{i % 2}" for i, r in enumerate(rows)]
                write_csv(tmp_path / f"client{k}_mod{m}.csv", rows)
        clients = data.load_csv(tmp_path, data.CsvSchema(train_fraction=0.7, seed=1))
        assert len(clients) == 2
        for c in clients:
            assert set(c.train_features) == {0, 1}
            total = c.train_labels.shape[0] + c.test_labels.shape[0]
            assert total == 10
            assert c.train_features[0].shape[1] == 2

    def test_missing_label_column(self, tmp_path):
        write_csv(tmp_path / "client0_mod0.csv", ["1.0,2.0,3.0"], header="f0,f1,f2")
        with pytest.raises(SchemaError) as err:
            data.load_csv(tmp_path)
        assert "client0_mod0.csv" in str(err.value)

    def test_non_numeric_cell(self, tmp_path):
        write_csv(tmp_path / "client0_mod0.csv", ["1.0,2.0,0", "1.0,oops,1"])
        with pytest.raises(ParseError) as err:
            data.load_csv(tmp_path)
        assert err.value.row == 1
        assert err.value.column == 1

    def test_row_count_mismatch(self, tmp_path):
        write_csv(tmp_path / "client0_mod0.csv", [f"1.0,2.0,{i % 2}" for i in range(10)])
        write_csv(tmp_path / "client0_mod1.csv", [f"1.0,2.0,{i % 2}" for i in range(9)])
        with pytest.raises(AlignmentError):
            data.load_csv(tmp_path)

    def test_label_mismatch(self, tmp_path):
        write_csv(tmp_path / "client0_mod0.csv", ["1.0,2.0,0", "1.0,2.0,1"])
        write_csv(tmp_path / "client0_mod1.csv", ["1.0,2.0,1", "1.0,2.0,1"])
        with pytest.raises(AlignmentError):
            data.load_csv(tmp_path)

    def test_negative_label(self, tmp_path):
        write_csv(tmp_path / "client0_mod0.csv", ["1.0,2.0,-1"])
        with pytest.raises(ParseError):
            data.load_csv(tmp_path)

    def test_width_mismatch_across_clients(self, tmp_path):
        write_csv(tmp_path / "client0_mod0.csv", [f"1.0,2.0,{i % 2}" for i in range(4)])
        write_csv(tmp_path / "client1_mod0.csv", [f"1.0,{i % 2}" for i in range(4)],
                  header="f0,label")
        with pytest.raises(SchemaError):
            data.load_csv(tmp_path)

    def test_empty_directory(self, tmp_path):
        with pytest.raises(DataError):
            data.load_csv(tmp_path)

    def test_split_determinism(self, tmp_path):
        write_csv(tmp_path / "client0_mod0.csv", [f"{i}.0,2.0,{i % 2}" for i in range(12)])
        a = data.load_csv(tmp_path, data.CsvSchema(seed=3))[0]
        b = data.load_csv(tmp_path, data.CsvSchema(seed=3))[0]
        assert np.array_equal(a.train_features[0], b.train_features[0])
        assert np.array_equal(a.train_labels, b.train_labels)
