"""Агрегация на сервере: взвешенное среднее локальных обновлений."""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from safl_sim.errors import ConfigError, DimensionMismatchError, PreconditionError

WEIGHT_SUM_TOL = 1e-12


class WeightKind(str, Enum):
    UNIFORM = "uniform"
    SIZE_PROPORTIONAL = "size_proportional"
    IDA = "ida"
    CUSTOM = "custom"


class WeightScheme(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: WeightKind = WeightKind.UNIFORM
    # custom: вес на каждое устройство, индекс = id
    custom: Optional[list[float]] = None

    @model_validator(mode="after")
    def _check_custom(self) -> "WeightScheme":
        if self.kind == WeightKind.CUSTOM:
            if not self.custom:
                raise ValueError("weights.custom is required for the custom scheme")
            if any(v < 0 for v in self.custom):
                raise ValueError("weights.custom entries must be non-negative")
        return self


@dataclass(frozen=True, eq=False)
class Update:
    device_id: int
    z: np.ndarray
    size: int


def _normalize(raw: np.ndarray) -> list[float]:
    total = float(raw.sum())
    if total <= 0:
        raise PreconditionError("weights carry no mass over the received updates")
    eta = raw / total
    if abs(float(eta.sum()) - 1.0) > WEIGHT_SUM_TOL:
        raise PreconditionError(f"weights sum to {eta.sum()!r}, not 1")
    return [float(v) for v in eta]


def _ida_raw(updates: Sequence[Update], z_ref: np.ndarray) -> np.ndarray:
    dist = np.array([float(np.linalg.norm(z_ref - u.z)) for u in updates])
    exact = dist == 0.0
    if exact.any():
        # обратное расстояние бесконечно: вся масса делится между совпадениями
        return exact.astype(float)
    return 1.0 / dist


def weights(
    scheme: WeightScheme,
    updates: Sequence[Update],
    z_ref: Optional[np.ndarray] = None,
) -> list[float]:
    """η_k для полученных обновлений; не выбранные устройства в список не входят."""
    if not updates:
        raise PreconditionError("no updates to weight")

    if scheme.kind == WeightKind.UNIFORM:
        raw = np.ones(len(updates))
    elif scheme.kind == WeightKind.SIZE_PROPORTIONAL:
        raw = np.array([u.size for u in updates], dtype=float)
    elif scheme.kind == WeightKind.IDA:
        if z_ref is None:
            raise PreconditionError("ida weights need the previous global model")
        raw = _ida_raw(updates, z_ref)
    else:
        missing = [u.device_id for u in updates if u.device_id >= len(scheme.custom)]
        if missing:
            raise ConfigError("weights.custom", f"no weight for devices {missing}")
        raw = np.array([scheme.custom[u.device_id] for u in updates], dtype=float)

    return _normalize(raw)


def aggregate(updates: Sequence[Update], eta: Sequence[float]) -> np.ndarray:
    """Σ η_k z_k; суммирование в порядке id устройств."""
    if len(updates) != len(eta):
        raise DimensionMismatchError(f"{len(updates)} updates but {len(eta)} weights")
    if not updates:
        raise PreconditionError("nothing to aggregate")
    shape = updates[0].z.shape
    if any(u.z.shape != shape for u in updates):
        raise DimensionMismatchError("updates have different lengths")

    total = np.zeros(shape)
    for update, weight in sorted(zip(updates, eta), key=lambda pair: pair[0].device_id):
        total += weight * update.z
    return total
