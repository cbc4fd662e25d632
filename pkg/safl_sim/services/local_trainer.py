"""Локальное обучение устройства: SGD по одному примеру."""

import math
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field

from safl_sim.errors import DimensionMismatchError, DivergenceError, EmptyDatasetError, PreconditionError
from safl_sim.services.objectives import CurvatureBounds, Objective, Sample, grad, sample_gradient

if TYPE_CHECKING:
    from safl_sim.services.orchestrator import DeviceState

logger = structlog.get_logger()


class ScheduleKind(str, Enum):
    CONSTANT = "constant"
    INVERSE = "inverse"


class Sampling(str, Enum):
    IID = "iid"
    SHUFFLE = "shuffle"


class LrSchedule(BaseModel):
    """constant: α_t = α; inverse: α_t = α₀/(t+1)."""
    model_config = ConfigDict(extra="forbid")

    kind: ScheduleKind = ScheduleKind.CONSTANT
    alpha: float = Field(0.05, gt=0)

    def rate(self, t: int) -> float:
        if self.kind == ScheduleKind.INVERSE:
            return self.alpha / (t + 1)
        return self.alpha

    def check_theorem1(self, bounds: CurvatureBounds) -> None:
        if self.kind != ScheduleKind.CONSTANT:
            raise PreconditionError("the constant-rate bound needs a constant schedule")
        if bounds.mu <= 0:
            raise PreconditionError("the constant-rate bound needs mu > 0")
        limit = 1.0 / (2 * bounds.lam - bounds.mu)
        if not self.alpha < limit:
            raise PreconditionError(f"alpha={self.alpha} must be < 1/(2λ−μ) = {limit:.6g}")

    def check_corollary1(self, mu: float) -> None:
        if self.kind != ScheduleKind.INVERSE:
            raise PreconditionError("the O(1/t) bound needs an inverse schedule")
        if mu <= 0:
            raise PreconditionError("the O(1/t) bound needs mu > 0")
        low, high = (2 - math.sqrt(2)) / mu, (2 + math.sqrt(2)) / mu
        if not low < self.alpha < high:
            raise PreconditionError(f"alpha0={self.alpha} must lie in ({low:.6g}, {high:.6g})")


def sgd_step(w: np.ndarray, sample: Sample, obj: Objective, alpha: float) -> np.ndarray:
    if alpha < 0:
        raise PreconditionError(f"step size must be non-negative, got {alpha}")
    g = grad(obj, w, sample)
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient")
    new = w - alpha * g
    if not np.all(np.isfinite(new)):
        raise DivergenceError("non-finite parameters after SGD step")
    return new


def run_local_epochs(
    device: "DeviceState",
    obj: Objective,
    E: int,
    schedule: LrSchedule,
    sampling: Sampling = Sampling.IID,
) -> tuple[np.ndarray, int]:
    """E проходов по обучающей части; счётчик шагов устройства растёт на m_k·E.

    Шаг тот же, что у sgd_step; конечность параметров проверяется после каждой эпохи.
    """
    if E < 1:
        raise PreconditionError(f"E must be ≥ 1, got {E}")
    m = len(device.train)
    if m == 0:
        raise EmptyDatasetError(f"device {device.device_id} has an empty shard")

    X = device.train.X
    if device.w.shape != (obj.param_dim,) or X.shape[1] != obj.dim:
        raise DimensionMismatchError(
            f"device {device.device_id}: parameters {device.w.shape}, features {X.shape[1]}, "
            f"objective expects {obj.param_dim} and {obj.dim}"
        )
    y = device.train.y.tolist()
    step_grad = sample_gradient(obj)
    rng = device.sgd_rng
    w = device.w
    for _ in range(E):
        order = rng.integers(0, m, size=m) if sampling == Sampling.IID else rng.permutation(m)
        rates = [schedule.rate(device.steps + j) for j in range(m)]
        for i, alpha in zip(order.tolist(), rates):
            w = w - alpha * step_grad(w, X[i], y[i])
        device.steps += m
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"non-finite parameters after local epoch on device {device.device_id}")
    return w, m * E
