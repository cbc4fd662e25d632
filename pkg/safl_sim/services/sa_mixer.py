"""Отжиг: вероятность возмущения p = exp(−t/L) и покоординатное смешивание моделей."""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from safl_sim.errors import DimensionMismatchError, PreconditionError


class MaskMode(str, Enum):
    VECTOR = "vector"
    SCALAR = "scalar"


class AnnealClock(str, Enum):
    ROUNDS = "rounds"
    LOCAL_STEPS = "local_steps"


class AnnealConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    # максимальная температура, в единицах часов clock
    L: float = Field(80.0, gt=0)
    epsilon: float = Field(0.3, ge=0, le=1)
    mask_mode: MaskMode = MaskMode.VECTOR
    clock: AnnealClock = AnnealClock.ROUNDS


@dataclass(frozen=True, eq=False)
class MixMask:
    """Вес z̄ по координатам: ε с вероятностью p, иначе 1."""
    u: np.ndarray

    def __len__(self) -> int:
        return len(self.u)


def selection_probability(t: int, L: float) -> float:
    if L <= 0:
        raise PreconditionError(f"L must be > 0, got {L}")
    if t < 0:
        raise PreconditionError(f"t must be ≥ 0, got {t}")
    return math.exp(-t / L)


def sample_mask(
    d: int,
    p: float,
    epsilon: float,
    rng: np.random.Generator,
    mode: MaskMode = MaskMode.VECTOR,
) -> MixMask:
    if not 0.0 <= p <= 1.0:
        raise PreconditionError(f"p must lie in [0, 1], got {p}")
    if mode == MaskMode.SCALAR:
        perturbed = np.full(d, rng.random() < p)
    else:
        perturbed = rng.random(d) < p
    return MixMask(np.where(perturbed, epsilon, 1.0))


def mix(u: MixMask, z_bar: np.ndarray, z_local: np.ndarray) -> np.ndarray:
    """u ⊙ z̄ + (1 − u) ⊙ z; при u_j = 1 берётся z̄_j без округлений."""
    if not (u.u.shape == z_bar.shape == z_local.shape):
        raise DimensionMismatchError(
            f"mask {u.u.shape}, server {z_bar.shape} and local {z_local.shape} differ"
        )
    return np.where(u.u == 1.0, z_bar, z_local + u.u * (z_bar - z_local))


def proof_epsilon(c1: float, p: float) -> float:
    """ε = 2(1−c₁)(1−p)/(c₁p), пара (ε, p) из анализа сходимости; в прогоне не используется."""
    if not 0 < c1 <= 0.5:
        raise PreconditionError(f"c1 must lie in (0, 0.5], got {c1}")
    if not 0 < p <= 1:
        raise PreconditionError(f"p must lie in (0, 1], got {p}")
    return 2 * (1 - c1) * (1 - p) / (c1 * p)
