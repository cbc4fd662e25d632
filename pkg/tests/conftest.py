"""Общие фикстуры тестов."""

from typing import Any, Callable

import numpy as np
import pytest
import structlog

from safl_sim.services.objectives import Dataset
from safl_sim.services.orchestrator import SimConfig


@pytest.fixture(autouse=True)
def _reset_structlog():
    # main() перенастраивает structlog на текущий stderr
    yield
    structlog.reset_defaults()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def regression_data(rng: np.random.Generator) -> Dataset:
    """Шумная регрессия: 40 примеров, 4 признака, 2 группы."""
    X = rng.standard_normal((40, 4))
    y = X @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.1 * rng.standard_normal(40)
    return Dataset(X, y, np.arange(40) % 2)


@pytest.fixture
def classification_data(rng: np.random.Generator) -> Dataset:
    labels = rng.integers(0, 3, size=60)
    means = np.array([[2.0, 0.0], [-2.0, 0.0], [0.0, 2.0]])
    X = np.hstack([means[labels] + rng.standard_normal((60, 2)), np.ones((60, 1))])
    return Dataset(X, labels.astype(float), labels)


def _merge(base: dict[str, Any], extra: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


@pytest.fixture
def make_config() -> Callable[..., SimConfig]:
    """Маленькая ridge-задача; ключи можно переопределить вложенными словарями."""

    def factory(**overrides: Any) -> SimConfig:
        base = {
            "n": 5,
            "T": 5,
            "E": 1,
            "algorithm": "safl",
            "seed": 3,
            "dataset": {"kind": "synthetic_regression", "num_samples": 300, "dim": 4, "num_classes": 2},
            "objective": {"kind": "ridge", "reg": 0.1},
            "partition": {"mean_size": 12, "size_var": 4.0, "max_labels_per_device": 1},
            "anneal": {"L": 5.0, "epsilon": 0.3},
            "lr": {"kind": "constant", "alpha": 0.05},
        }
        return SimConfig.model_validate(_merge(base, overrides))

    return factory


@pytest.fixture
def classification_config(make_config: Callable[..., SimConfig]) -> Callable[..., SimConfig]:
    def factory(**overrides: Any) -> SimConfig:
        base = {
            "n": 12,
            "T": 6,
            "dataset": {"kind": "synthetic_classification", "num_samples": 900, "dim": 4, "num_classes": 3, "separation": 0.7},
            "objective": {"kind": "logistic", "reg": 0.05},
            "partition": {"mean_size": 20, "size_var": 0.0, "max_labels_per_device": 2, "biased_devices": 4},
            "gate": {"nu": 0.05},
            "lr": {"kind": "constant", "alpha": 0.1},
        }
        return make_config(**_merge(base, overrides))

    return factory
