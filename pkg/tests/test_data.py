import numpy as np
import pytest

from protofed import data


def write_csv(path, text):
    path.write_text(text)
    return path


SCHEMA = data.CsvSchema(label="label")


class TestLoadCsv:
    def test_basic_parse(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "f1,f2,label\n1,2,a\n3,4,b\n5,6,a\n")
        ds = data.load_csv(p, SCHEMA)
        assert ds.num_samples == 3
        assert ds.num_features == 2
        assert ds.num_classes == 2
        assert ds.class_names == ["a", "b"]

    def test_nan_row_dropped_and_counted(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "f1,f2,label\n1,2,a\n,4,b\n5,6,a\n7,8,b\n")
        ds = data.load_csv(p, SCHEMA)
        assert ds.num_samples == 3
        assert ds.dropped_rows == 1

    def test_single_label_value_rejected(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "f1,label\n1,a\n2,a\n")
        with pytest.raises(ValueError):
            data.load_csv(p, SCHEMA)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            data.load_csv(tmp_path / "nope.csv", SCHEMA)

    def test_empty_rejected(self, tmp_path):
        p = write_csv(tmp_path / "d.csv", "f1,label\n")
        with pytest.raises(ValueError):
            data.load_csv(p, SCHEMA)

    def test_drop_and_categorical_columns(self, tmp_path):
        p = write_csv(
            tmp_path / "d.csv",
            "id,proto,f1,label\n10,tcp,1,a\n11,udp,2,b\n12,tcp,3,a\n",
        )
        schema = data.CsvSchema(label="label", drop=["id"], categorical=["proto"])
        ds = data.load_csv(p, schema)
        # proto one-hot (2 categories) + f1
        assert ds.num_features == 3

    def test_schema_file_parsing(self, tmp_path):
        p = tmp_path / "schema.yaml"
        p.write_text("label: attack_type\ndrop: id, ts\ncategorical: [proto]\n")
        schema = data.load_schema(p)
        assert schema.label == "attack_type"
        assert schema.drop == ["id", "ts"]
        assert schema.categorical == ["proto"]


class TestPreprocess:
    def make(self, column):
        features = np.array(column, dtype=float)[:, None]
        return data.Dataset(
            features=np.hstack([features, np.ones_like(features)]),
            labels=np.array([0, 1, 0][: len(column)]),
            class_names=["a", "b"],
            feature_ranges=np.array([[min(column), max(column)], [1.0, 1.0]]),
        )

    def test_minmax_maps_to_unit_interval(self):
        ds = data.preprocess(self.make([0.0, 5.0, 10.0]), "minmax")
        assert np.allclose(ds.features[:, 0], [0.0, 0.5, 1.0])

    def test_constant_column_maps_to_zero(self):
        ds = data.preprocess(self.make([4.0, 4.0, 4.0]), "minmax")
        assert np.allclose(ds.features[:, 0], 0.0)

    def test_zscore_moments(self):
        rng = np.random.default_rng(0)
        ds = data.Dataset(
            features=rng.normal(3.0, 2.5, size=(200, 4)),
            labels=rng.integers(0, 2, size=200),
            class_names=["a", "b"],
            feature_ranges=np.zeros((4, 2)),
        )
        out = data.preprocess(ds, "zscore")
        assert np.allclose(out.features.mean(axis=0), 0.0, atol=1e-9)
        assert np.allclose(out.features.std(axis=0), 1.0, atol=1e-9)

    def test_minmax_idempotent(self):
        rng = np.random.default_rng(1)
        ds = data.Dataset(
            features=rng.uniform(-3, 9, size=(50, 3)),
            labels=rng.integers(0, 2, size=50),
            class_names=["a", "b"],
            feature_ranges=np.zeros((3, 2)),
        )
        once = data.preprocess(ds, "minmax")
        again = data.preprocess(once, "minmax")
        assert np.allclose(once.features, again.features, atol=1e-12)

    def test_ranges_preserved_from_raw_data(self):
        ds = data.preprocess(self.make([0.0, 5.0, 10.0]), "minmax")
        assert np.allclose(ds.feature_ranges[0], [0.0, 10.0])


class TestSplit:
    def balanced(self, n_per_class=50, k=2, seed=0):
        rng = np.random.default_rng(seed)
        features = rng.normal(size=(n_per_class * k, 4))
        labels = np.repeat(np.arange(k), n_per_class)
        return data.Dataset(
            features=features,
            labels=labels,
            class_names=[str(j) for j in range(k)],
            feature_ranges=np.stack([features.min(0), features.max(0)], axis=1),
        )

    def test_stratified_80_20(self):
        train, test = data.split_train_test(self.balanced(), 0.8, seed=0)
        assert train.num_samples == 80 and test.num_samples == 20
        assert np.all(train.class_counts() == 40)
        assert np.all(test.class_counts() == 10)

    def test_same_seed_identical(self):
        ds = self.balanced()
        a_train, a_test = data.split_train_test(ds, 0.8, seed=3)
        b_train, b_test = data.split_train_test(ds, 0.8, seed=3)
        assert np.array_equal(a_train.features, b_train.features)
        assert np.array_equal(a_test.labels, b_test.labels)

    def test_full_fraction_rejected(self):
        with pytest.raises(ValueError):
            data.split_train_test(self.balanced(), 1.0, seed=0)

    def test_single_sample_class_goes_to_training(self):
        ds = self.balanced()
        features = np.vstack([ds.features, np.zeros((1, 4))])
        labels = np.concatenate([ds.labels, [2]])
        ds3 = data.Dataset(
            features=features,
            labels=labels,
            class_names=["0", "1", "2"],
            feature_ranges=ds.feature_ranges,
        )
        train, test = data.split_train_test(ds3, 0.8, seed=0)
        assert train.class_counts()[2] == 1
        assert test.class_counts()[2] == 0

    def test_tiny_dataset_rejected(self):
        ds = self.balanced(n_per_class=4)
        small = ds.subset(np.arange(8))
        with pytest.raises(ValueError):
            data.split_train_test(small, 0.8, seed=0)


class TestDirichletPartition:
    def train_set(self, k=4, n=200, seed=0):
        ds = data.synthesize_gaussian(k, 8, n, 3.0, seed=seed)
        train, _ = data.split_train_test(ds, 0.8, seed=seed)
        return train

    def test_conservation(self):
        train = self.train_set()
        plan = data.dirichlet_partition(train, 4, 0.3, seed=1)
        pooled = np.sort(np.concatenate(plan.shards))
        assert np.array_equal(pooled, np.arange(train.num_samples))
        for i, shard in enumerate(plan.shards):
            assert plan.counts[i].sum() == len(shard)
            assert np.array_equal(
                plan.counts[i], np.bincount(train.labels[shard], minlength=4)
            )

    def test_high_alpha_is_nearly_uniform(self):
        # law-of-large-numbers check: counts averaged over 5 seeds land within
        # +-10% of the uniform share
        train = self.train_set(k=3, n=500)
        per_class = train.class_counts()
        mean_counts = np.mean(
            [data.dirichlet_partition(train, 4, 1e6, seed=s).counts for s in range(5)],
            axis=0,
        )
        expected = per_class / 4
        assert np.all(np.abs(mean_counts - expected) <= 0.1 * expected)

    def test_low_alpha_produces_missing_classes(self):
        # heavy-skew regime: with alpha=0.25 most draws leave some participant
        # without at least one class
        train = self.train_set(k=9, n=120, seed=5)
        hits = 0
        for seed in range(10):
            plan = data.dirichlet_partition(train, 10, 0.25, seed=seed)
            if (plan.counts == 0).any():
                hits += 1
        assert hits >= 9

    def test_precondition_errors(self):
        train = self.train_set()
        with pytest.raises(ValueError):
            data.dirichlet_partition(train, 1, 0.5, seed=0)
        with pytest.raises(ValueError):
            data.dirichlet_partition(train, 4, 0.0, seed=0)

    def test_entropy_nondecreasing_in_alpha(self):
        train = self.train_set(k=5, n=300, seed=2)

        def mean_entropy(alpha):
            values = []
            for seed in range(10):
                plan = data.dirichlet_partition(train, 6, alpha, seed=seed)
                for row in plan.counts:
                    if row.sum() == 0:
                        continue
                    p = row / row.sum()
                    p = p[p > 0]
                    values.append(float(-(p * np.log(p)).sum()))
            return np.mean(values)

        entropies = [mean_entropy(a) for a in (0.25, 0.5, 0.75, 5.0)]
        assert all(b >= a for a, b in zip(entropies, entropies[1:]))


class TestSynthesizeGaussian:
    def test_strong_separation_centroid_accuracy(self):
        ds = data.synthesize_gaussian(4, 8, 200, class_separation=10.0, seed=0)
        train, test = data.split_train_test(ds, 0.8, seed=0)
        centroids = np.stack(
            [train.features[train.labels == j].mean(axis=0) for j in range(4)]
        )
        d2 = ((test.features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        accuracy = np.mean(d2.argmin(axis=1) == test.labels)
        assert accuracy >= 0.99

    def test_zero_separation_is_chance_level(self):
        ds = data.synthesize_gaussian(4, 8, 800, class_separation=0.0, seed=1)
        train, test = data.split_train_test(ds, 0.8, seed=1)
        centroids = np.stack(
            [train.features[train.labels == j].mean(axis=0) for j in range(4)]
        )
        d2 = ((test.features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        accuracy = np.mean(d2.argmin(axis=1) == test.labels)
        assert abs(accuracy - 0.25) <= 0.05

    def test_same_seed_identical(self):
        a = data.synthesize_gaussian(3, 8, 50, 2.0, seed=9)
        b = data.synthesize_gaussian(3, 8, 50, 2.0, seed=9)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            data.synthesize_gaussian(1, 8, 10, 1.0, seed=0)
        with pytest.raises(ValueError):
            data.synthesize_gaussian(3, 3, 10, 1.0, seed=0)
