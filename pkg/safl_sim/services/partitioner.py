"""Разбиение данных по устройствам: гауссовы размеры и перекос меток."""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from safl_sim.errors import ConfigError
from safl_sim.services.objectives import Dataset
from safl_sim.utils.helpers import Stream, make_rng

logger = structlog.get_logger()

MAX_SUBSET_ATTEMPTS = 100


class PartitionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(ge=1)
    mean_size: float = Field(20.0, gt=0)
    size_var: float = Field(0.0, ge=0)
    max_labels_per_device: int = Field(1, ge=1)
    min_labels_per_device: int = Field(1, ge=1)
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    holdout_fraction: float = Field(0.2, ge=0, lt=1)
    biased_devices: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_counts(self) -> "PartitionSpec":
        if self.biased_devices > self.n:
            raise ValueError("partition.biased_devices must not exceed n")
        if self.min_labels_per_device > self.max_labels_per_device:
            raise ValueError("partition.min_labels_per_device must not exceed max_labels_per_device")
        return self


@dataclass(frozen=True, eq=False)
class Shard:
    device_id: int
    labels: tuple[int, ...]
    train: Dataset
    holdout: Dataset
    biased: bool = False

    @property
    def size(self) -> int:
        """m_k: обучающая часть плюс отложенная."""
        return len(self.train) + len(self.holdout)


def sample_sizes(spec: PartitionSpec, rng: Optional[np.random.Generator] = None) -> list[int]:
    """m_k = max(⌊x_k⌋, 1), x_k ~ N(m̄, σ²)."""
    if rng is None:
        rng = make_rng(spec.seed or 0, Stream.PARTITION)
    draws = rng.normal(spec.mean_size, np.sqrt(spec.size_var), size=spec.n)
    return [max(int(np.floor(x)), 1) for x in draws]


def _draw_label_subset(
    rng: np.random.Generator,
    num_labels: int,
    low: int,
    cap: int,
    by_label: dict[int, np.ndarray],
) -> tuple[int, ...]:
    for _ in range(MAX_SUBSET_ATTEMPTS):
        size = int(rng.integers(low, cap + 1))
        subset = tuple(sorted(int(c) for c in rng.choice(num_labels, size=size, replace=False)))
        if all(len(by_label[c]) for c in subset):
            return subset
    raise ConfigError("dataset", "no label subset with samples found; labels are too sparse")


def _split_indices(
    rng: np.random.Generator,
    pool: np.ndarray,
    size: int,
    holdout_fraction: float,
) -> tuple[np.ndarray, np.ndarray]:
    holdout = min(int(np.floor(holdout_fraction * size)), size - 1, len(pool) - 1)
    if len(pool) >= size:
        idx = rng.choice(pool, size=size, replace=False)
        return idx[holdout:], idx[:holdout]
    # пул меньше m_k: отложенная часть без повторов, обучающая с возвращением
    order = rng.permutation(pool)
    held, rest = order[:holdout], order[holdout:]
    return rng.choice(rest, size=size - holdout, replace=True), held


def partition(
    dataset: Dataset,
    spec: PartitionSpec,
    rng: Optional[np.random.Generator] = None,
) -> list[Shard]:
    if len(dataset) == 0:
        raise ConfigError("dataset", "cannot partition an empty dataset")
    num_labels = dataset.num_labels
    if spec.max_labels_per_device > num_labels:
        raise ConfigError(
            "partition.max_labels_per_device",
            f"{spec.max_labels_per_device} exceeds the {num_labels} labels in the dataset",
        )
    if rng is None:
        rng = make_rng(spec.seed or 0, Stream.PARTITION)

    sizes = sample_sizes(spec, rng)
    biased = set()
    if spec.biased_devices:
        biased = {int(k) for k in rng.choice(spec.n, size=spec.biased_devices, replace=False)}
    by_label = {c: np.flatnonzero(dataset.labels == c) for c in range(num_labels)}

    shards = []
    for k, size in enumerate(sizes):
        if k in biased:
            low, cap = 1, 1
        else:
            low, cap = spec.min_labels_per_device, spec.max_labels_per_device
        labels = _draw_label_subset(rng, num_labels, low, cap, by_label)
        pool = np.concatenate([by_label[c] for c in labels])
        train_idx, holdout_idx = _split_indices(rng, pool, size, spec.holdout_fraction)
        shards.append(Shard(
            device_id=k,
            labels=labels,
            train=dataset.subset(train_idx),
            holdout=dataset.subset(holdout_idx),
            biased=k in biased,
        ))

    logger.debug(
        "Partition built",
        devices=spec.n,
        mean_size=float(np.mean(sizes)),
        biased=len(biased),
    )
    return shards


# ── CSV ──────────────────────────────────────────────────────


def load_dataset_csv(path: str | Path) -> Dataset:
    """Читает f0..f(d−1),label[,group]; group (если есть) задаёт метки разбиения."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = list(reader)

    if not header:
        raise ConfigError("dataset.path", f"{path} has no header row")
    features = [name for name in header if name.startswith("f")]
    if features != [f"f{i}" for i in range(len(features))] or not features:
        raise ConfigError("dataset.path", f"{path}: expected columns f0..f(d-1) first")
    if "label" not in header:
        raise ConfigError("dataset.path", f"{path}: missing 'label' column")
    label_col = header.index("label")
    group_col = header.index("group") if "group" in header else None

    try:
        X = np.array([[float(row[i]) for i in range(len(features))] for row in rows])
        y = np.array([float(row[label_col]) for row in rows])
        if group_col is not None:
            labels = np.array([int(row[group_col]) for row in rows])
        elif np.all(y == np.round(y)) and np.all(y >= 0):
            labels = y.astype(int)
        else:
            labels = np.zeros(len(rows), dtype=int)
    except (ValueError, IndexError) as exc:
        raise ConfigError("dataset.path", f"{path}: malformed row ({exc})") from exc

    if not rows:
        raise ConfigError("dataset.path", f"{path} has no samples")
    return Dataset(X.reshape(len(rows), len(features)), y, labels)


def save_dataset_csv(path: str | Path, dataset: Dataset, with_groups: bool = False) -> None:
    header = [f"f{i}" for i in range(dataset.dim)] + ["label"]
    if with_groups:
        header.append("group")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.X[i]] + [repr(float(dataset.y[i]))]
            if with_groups:
                row.append(str(int(dataset.labels[i])))
            writer.writerow(row)
