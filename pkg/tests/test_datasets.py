import numpy as np
import pytest

from safl_sim.services.datasets import (
    DatasetKind,
    DatasetSpec,
    build_dataset,
    split_test,
    synthetic_classification,
    synthetic_regression,
    toy_datasets,
)
from safl_sim.services.partitioner import save_dataset_csv
from safl_sim.utils.helpers import Stream, make_rng


def test_toy_datasets():
    d1, d2 = toy_datasets()
    assert np.array_equal(d1.X, [[0.25, 0.0]]) and d1.y[0] == -1.0
    assert np.array_equal(d2.X, [[0.0, 1.5]]) and d2.y[0] == 1.0


def test_toy_pool_has_no_test_set():
    train, test = build_dataset(DatasetSpec(kind=DatasetKind.TOY), make_rng(0, Stream.DATA))
    assert len(train) == 2
    assert len(test) == 0


class TestSynthetic:
    def test_regression_is_noiseless_by_default(self, rng):
        spec = DatasetSpec(num_samples=50, dim=3, num_classes=2)
        data = synthetic_regression(spec, rng)
        assert data.X.shape == (50, 3)
        assert set(np.unique(data.labels).tolist()) <= {0, 1}
        w, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
        np.testing.assert_allclose(data.X @ w, data.y, atol=1e-9)

    def test_unit_norm_rows(self, rng):
        spec = DatasetSpec(num_samples=30, dim=5, num_classes=1, unit_norm=True)
        data = synthetic_regression(spec, rng)
        np.testing.assert_allclose(np.linalg.norm(data.X, axis=1), 1.0)

    def test_classification_bias_column(self, rng):
        spec = DatasetSpec(kind=DatasetKind.SYNTHETIC_CLASSIFICATION, num_samples=40, dim=4, num_classes=3)
        data = synthetic_classification(spec, rng)
        assert np.all(data.X[:, -1] == 1.0)
        assert np.array_equal(data.y, data.labels.astype(float))
        assert data.labels.max() <= 2

    def test_same_stream_same_data(self):
        spec = DatasetSpec(num_samples=20, dim=2)
        a, _ = build_dataset(spec, make_rng(5, Stream.DATA))
        b, _ = build_dataset(spec, make_rng(5, Stream.DATA))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)


def test_split_test(rng):
    data = synthetic_regression(DatasetSpec(num_samples=100, dim=2), rng)
    train, test = split_test(data, 0.25, rng)
    assert (len(train), len(test)) == (75, 25)
    train, test = split_test(data, 0.0, rng)
    assert len(train) == 100 and len(test) == 0


def test_csv_kind(tmp_path, regression_data):
    path = tmp_path / "data.csv"
    save_dataset_csv(path, regression_data, with_groups=True)
    pool, test = build_dataset(DatasetSpec(kind=DatasetKind.CSV, path=str(path)), make_rng(0, Stream.DATA))
    assert np.array_equal(pool.X, regression_data.X)
    assert np.array_equal(pool.labels, regression_data.labels)
    assert len(test) == 0


class TestSpecValidation:
    def test_csv_needs_path(self):
        with pytest.raises(ValueError):
            DatasetSpec(kind=DatasetKind.CSV)

    def test_classification_needs_two_classes(self):
        with pytest.raises(ValueError):
            DatasetSpec(kind=DatasetKind.SYNTHETIC_CLASSIFICATION, num_classes=1)

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            DatasetSpec(samples=10)
