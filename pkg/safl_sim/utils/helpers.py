"""Вспомогательные функции."""

from enum import IntEnum
from typing import Optional, Sequence

import numpy as np


class Stream(IntEnum):
    """Именованные потоки случайных чисел."""

    DATA = 0
    PARTITION = 1
    INIT = 2
    SERVER = 3
    DEVICE = 4


class DeviceStream(IntEnum):
    SGD = 0
    MASK = 1
    GATE = 2


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Независимый генератор для (seed, ключи); не зависит от порядка вызовов."""
    seq = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(seq)


def device_rng(seed: int, device_id: int, purpose: DeviceStream) -> np.random.Generator:
    return make_rng(seed, Stream.DEVICE, device_id, purpose)


def mean_and_stderr(values: Sequence[float]) -> tuple[float, float]:
    """Среднее и стандартная ошибка (0 для одного значения)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))


def parse_variants(text: Optional[str]) -> Optional[list[str]]:
    """Парсит список вариантов вида "fedavg,safl"."""
    if text is None:
        return None
    names = [part.strip() for part in text.split(",")]
    return [name for name in names if name] or None


def format_float(value: Optional[float]) -> str:
    """Точное текстовое представление для CSV (пусто для None)."""
    if value is None:
        return ""
    return repr(float(value))


def parse_float(text: str) -> Optional[float]:
    text = text.strip()
    if not text:
        return None
    return float(text)
