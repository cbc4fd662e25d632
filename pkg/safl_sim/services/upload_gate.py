"""Вероятностная отправка обновлений по разрыву качества глобальной и локальной моделей."""

import math
import sys
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from safl_sim.errors import EmptyDatasetError, PreconditionError
from safl_sim.services.objectives import Dataset, Objective, empirical_risk, predict


class AccuracyProxy(str, Enum):
    HOLDOUT_ACCURACY = "holdout_accuracy"
    INVERSE_RISK = "inverse_risk"


class GateReference(str, Enum):
    RECEIVED = "received"
    MIXED = "mixed"


class GateConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    nu: float = Field(0.1, gt=0)
    eps_div: float = Field(1e-6, gt=0)
    # None: точность для классификации, 1/(1+риск) для регрессии
    accuracy_proxy: Optional[AccuracyProxy] = None
    reference: GateReference = GateReference.RECEIVED

    def proxy_for(self, obj: Objective) -> AccuracyProxy:
        if self.accuracy_proxy is not None:
            return self.accuracy_proxy
        return AccuracyProxy.HOLDOUT_ACCURACY if obj.is_classifier else AccuracyProxy.INVERSE_RISK


@dataclass
class GateState:
    q: float = 1.0
    delta: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.q <= 1.0:
            raise PreconditionError(f"upload probability must lie in (0, 1], got {self.q}")


def accuracy_proxy(model: np.ndarray, eval_set: Dataset, obj: Objective, kind: AccuracyProxy) -> float:
    if len(eval_set) == 0:
        raise EmptyDatasetError("accuracy proxy on an empty evaluation set")
    if kind == AccuracyProxy.HOLDOUT_ACCURACY:
        if not obj.is_classifier:
            raise PreconditionError(f"holdout accuracy needs a classifier, not {obj.kind.value}")
        hits = predict(obj, model, eval_set.X) == eval_set.y
        return float(np.mean(hits))
    return 1.0 / (1.0 + empirical_risk(obj, model, eval_set))


def performance_gap(h_global: float, h_local: float, eps_div: float = 1e-6) -> float:
    """Δ = |h(z̄) − h(z)| / (h(z̄) + h(z) + ε_div)."""
    if h_global < 0 or h_local < 0:
        raise PreconditionError(f"accuracies must be non-negative, got {h_global}, {h_local}")
    return abs(h_global - h_local) / (h_global + h_local + eps_div)


def upload_probability(delta: float, nu: float) -> float:
    if delta < 0 or nu <= 0:
        raise PreconditionError(f"need Δ ≥ 0 and ν > 0, got Δ={delta}, ν={nu}")
    # q > 0 даже при исчезновении порядка exp
    return max(math.exp(-delta / nu), sys.float_info.min)


def decide_upload(q: float, rng: np.random.Generator) -> bool:
    if not 0.0 < q <= 1.0:
        raise PreconditionError(f"upload probability must lie in (0, 1], got {q}")
    return bool(rng.random() < q)
