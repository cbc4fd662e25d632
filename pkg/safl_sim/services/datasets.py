"""Источники данных: синтетические задачи, CSV и двухточечный пример."""

from enum import Enum
from typing import Optional

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from safl_sim.services.objectives import Dataset
from safl_sim.services.partitioner import load_dataset_csv

logger = structlog.get_logger()


class DatasetKind(str, Enum):
    SYNTHETIC_REGRESSION = "synthetic_regression"
    SYNTHETIC_CLASSIFICATION = "synthetic_classification"
    CSV = "csv"
    TOY = "toy"


class DatasetSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: DatasetKind = DatasetKind.SYNTHETIC_REGRESSION
    num_samples: int = Field(2000, ge=1)
    dim: int = Field(10, ge=1)
    # классы (classification) или группы признаков (regression)
    num_classes: int = Field(3, ge=1)
    separation: float = Field(1.0, ge=0)
    noise: float = Field(0.0, ge=0)
    unit_norm: bool = False
    test_fraction: float = Field(0.0, ge=0, lt=1)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _check_kind(self) -> "DatasetSpec":
        if self.kind == DatasetKind.CSV and not self.path:
            raise ValueError("dataset.path is required for csv datasets")
        if self.kind == DatasetKind.SYNTHETIC_CLASSIFICATION:
            if self.dim < 2:
                raise ValueError("dataset.dim must be ≥ 2 for classification (one bias feature)")
            if self.num_classes < 2:
                raise ValueError("dataset.num_classes must be ≥ 2 for classification")
        return self


def toy_datasets() -> tuple[Dataset, Dataset]:
    """D₁ = {([1/4, 0], −1)}, D₂ = {([0, 3/2], 1)}."""
    d1 = Dataset(np.array([[0.25, 0.0]]), np.array([-1.0]), np.array([0]))
    d2 = Dataset(np.array([[0.0, 1.5]]), np.array([1.0]), np.array([1]))
    return d1, d2


def synthetic_regression(spec: DatasetSpec, rng: np.random.Generator) -> Dataset:
    w_true = rng.standard_normal(spec.dim)
    centers = rng.normal(0.0, spec.separation, size=(spec.num_classes, spec.dim))
    groups = rng.integers(0, spec.num_classes, size=spec.num_samples)
    X = centers[groups] + rng.standard_normal((spec.num_samples, spec.dim))
    if spec.unit_norm:
        X /= np.linalg.norm(X, axis=1, keepdims=True)
    y = X @ w_true + spec.noise * rng.standard_normal(spec.num_samples)
    return Dataset(X, y, groups)


def synthetic_classification(spec: DatasetSpec, rng: np.random.Generator) -> Dataset:
    """Гауссовы облака классов; последний признак равен 1 (свободный член)."""
    means = rng.normal(0.0, spec.separation, size=(spec.num_classes, spec.dim - 1))
    labels = rng.integers(0, spec.num_classes, size=spec.num_samples)
    features = means[labels] + rng.standard_normal((spec.num_samples, spec.dim - 1))
    X = np.hstack([features, np.ones((spec.num_samples, 1))])
    return Dataset(X, labels.astype(float), labels)


def split_test(dataset: Dataset, fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    count = int(np.floor(fraction * len(dataset)))
    if count == 0:
        return dataset, Dataset.empty(dataset.dim)
    order = rng.permutation(len(dataset))
    return dataset.subset(np.sort(order[count:])), dataset.subset(np.sort(order[:count]))


def build_dataset(spec: DatasetSpec, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Пул для разбиения по устройствам и глобальная тестовая выборка."""
    if spec.kind == DatasetKind.TOY:
        return Dataset.concat(toy_datasets()), Dataset.empty(2)

    if spec.kind == DatasetKind.CSV:
        pool = load_dataset_csv(spec.path)
    elif spec.kind == DatasetKind.SYNTHETIC_CLASSIFICATION:
        pool = synthetic_classification(spec, rng)
    else:
        pool = synthetic_regression(spec, rng)

    train, test = split_test(pool, spec.test_fraction, rng)
    logger.debug("Dataset built", kind=spec.kind.value, train=len(train), test=len(test), dim=train.dim)
    return train, test
