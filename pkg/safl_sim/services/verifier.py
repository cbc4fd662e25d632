"""Теоретические оценки MSE и подгонка эмпирической скорости сходимости.

Все оценки вычисляются в момент t = номер раунда связи. Каждый раунд даёт
минимум один локальный шаг на устройство, а оценки убывают по t, поэтому
подстановка номера раунда не делает их строже.
"""

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
import structlog

from safl_sim.errors import PreconditionError
from safl_sim.services.local_trainer import ScheduleKind

if TYPE_CHECKING:
    from safl_sim.services.orchestrator import Federation

logger = structlog.get_logger()

LINEAR_REGIME_SLOPE = -3.0
MIN_SERIES_LENGTH = 20


@dataclass(frozen=True)
class BoundInputs:
    mu: float
    lam: float
    sigma_sq: tuple[float, ...]
    alpha: float
    epsilon: float
    q_local: int
    eta: tuple[float, ...]
    zeta: float
    T: int
    # Σ η_k ‖w₀^(k) − w*‖², второй член константы для взвешенной ошибки
    zeta_weighted: float = 0.0
    p: float = 1.0
    schedule: ScheduleKind = ScheduleKind.CONSTANT

    def __post_init__(self) -> None:
        if len(self.sigma_sq) != len(self.eta):
            raise PreconditionError("sigma_sq and eta must have one entry per device")
        values = (self.mu, self.alpha, self.epsilon, self.zeta, self.zeta_weighted, self.p, *self.sigma_sq, *self.eta)
        if any(v < 0 for v in values):
            raise PreconditionError("bound inputs must be non-negative")
        if self.lam < self.mu:
            raise PreconditionError(f"lambda={self.lam} < mu={self.mu}")

    @classmethod
    def from_federation(cls, federation: "Federation") -> Optional["BoundInputs"]:
        """Константы подготовленной федерации; None для негладких задач."""
        if not federation.objective.is_smooth:
            return None
        bounds = federation.device_curvature()
        config = federation.config
        eta = tuple(float(v) for v in federation.eta)
        dist_sq = [float(np.sum((w0 - federation.w_star) ** 2)) for w0 in federation.init_vectors]
        epsilon = 1.0 if config.algorithm == "fedavg" else config.anneal.epsilon
        return cls(
            mu=min(b.mu for b in bounds),
            lam=max(b.lam for b in bounds),
            sigma_sq=tuple(b.sigma_sq for b in bounds),
            alpha=config.lr.alpha,
            epsilon=epsilon,
            q_local=config.E * max(len(d.train) for d in federation.devices),
            eta=eta,
            zeta=max(dist_sq),
            zeta_weighted=float(np.dot(eta, dist_sq)),
            T=config.T,
            schedule=config.lr.kind,
        )

    @property
    def weighted_noise(self) -> float:
        """Σ η_k² σ_k²."""
        return float(sum(e * e * s for e, s in zip(self.eta, self.sigma_sq)))


# ── Постоянный шаг ───────────────────────────────────────────


def _check_constant(inputs: BoundInputs) -> float:
    if inputs.schedule != ScheduleKind.CONSTANT:
        raise PreconditionError("the constant-rate bound needs a constant schedule")
    if inputs.mu <= 0:
        raise PreconditionError("the constant-rate bound needs mu > 0")
    if not inputs.alpha < 1.0 / (2 * inputs.lam - inputs.mu):
        raise PreconditionError(f"alpha={inputs.alpha} violates alpha < 1/(2λ−μ)")
    return 1.0 - inputs.alpha * inputs.mu


def _noise_ratio(inputs: BoundInputs, rho: float) -> float:
    c = (1 - inputs.p * (1 - inputs.epsilon**2)) * ((1 - inputs.alpha * (2 * inputs.lam - inputs.mu)) / rho) ** 2
    decay = rho ** (2 * inputs.q_local)
    return (1 - decay) / (1 - math.exp(-c) * decay)


def neighborhood(inputs: BoundInputs) -> float:
    """Предел оценки при t → ∞: радиус окрестности вокруг w*."""
    rho = _check_constant(inputs)
    return inputs.alpha / inputs.mu * inputs.weighted_noise * _noise_ratio(inputs, rho)


def theorem1_bound(inputs: BoundInputs, t: int) -> float:
    """(1−αμ)^{2t}·ζ плюс окрестность, зависящая от шума градиентов."""
    if t < 0:
        raise PreconditionError(f"t must be ≥ 0, got {t}")
    rho = _check_constant(inputs)
    return rho ** (2 * t) * inputs.zeta + neighborhood(inputs)


# ── Убывающий шаг α₀/(t+1) ───────────────────────────────────


def corollary1_constant(inputs: BoundInputs) -> float:
    if inputs.schedule != ScheduleKind.INVERSE:
        raise PreconditionError("the O(1/t) bound needs an inverse schedule")
    mu, a0 = inputs.mu, inputs.alpha
    if mu <= 0 or not (2 - math.sqrt(2)) / mu < a0 < (2 + math.sqrt(2)) / mu:
        raise PreconditionError(f"alpha0={a0} outside ((2−√2)/μ, (2+√2)/μ) for mu={mu}")
    noise = 2 * a0**2 * max(inputs.sigma_sq) / (2 - (2 - mu * a0) ** 2)
    return max(noise, inputs.zeta)


def corollary1_bound(c: float, t: int) -> float:
    if t < 0:
        raise PreconditionError(f"t must be ≥ 0, got {t}")
    return c / (t + 1)


def theorem3_constant(inputs: BoundInputs) -> float:
    if inputs.schedule != ScheduleKind.INVERSE:
        raise PreconditionError("the weighted-error bound needs an inverse schedule")
    mu, a0 = inputs.mu, inputs.alpha
    if not mu * a0 > 1:
        raise PreconditionError(f"alpha0={a0} must exceed 1/mu={1 / mu if mu else math.inf}")
    noise = a0**2 * float(np.dot(inputs.eta, inputs.sigma_sq)) / (mu * a0 - 1)
    return max(noise, inputs.zeta_weighted)


def theorem3_bound(c: float, t: int) -> float:
    if t < 0:
        raise PreconditionError(f"t must be ≥ 0, got {t}")
    return c / (t + 1)


# ── Эмпирика ─────────────────────────────────────────────────


@dataclass(frozen=True)
class RateFit:
    exponent: float
    floor: float
    regime: str


def fit_rate(
    mse_series: Sequence[float],
    decaying: bool = True,
    rounds: Optional[Sequence[int]] = None,
) -> RateFit:
    """Наклон log(mse − floor) по log(t+1) на второй половине ряда.

    floor = 0 для убывающего шага, минимум ряда для постоянного.
    t берётся из rounds; по умолчанию элемент i соответствует раунду t = i + 1.
    """
    series = np.asarray(mse_series, dtype=float)
    if series.size < MIN_SERIES_LENGTH:
        raise PreconditionError(f"need at least {MIN_SERIES_LENGTH} points, got {series.size}")
    if rounds is None:
        t = np.arange(1, series.size + 1, dtype=float)
    else:
        t = np.asarray(rounds, dtype=float)
        if t.shape != series.shape:
            raise PreconditionError(f"got {t.size} rounds for {series.size} mse values")
        if np.any(t < 0):
            raise PreconditionError("rounds must be non-negative")
    if not np.all(np.isfinite(series)) or np.any(series <= 0):
        raise PreconditionError("mse series must be finite and positive")
    if np.ptp(series) == 0:
        raise PreconditionError("degenerate (constant) series")

    floor = 0.0 if decaying else float(series.min())
    tail = slice(series.size // 2, None)
    excess, tt = series[tail] - floor, t[tail]
    keep = excess > 0
    if keep.sum() < 2:
        raise PreconditionError("too few points above the floor to fit a slope")

    slope = float(np.polyfit(np.log(tt[keep] + 1), np.log(excess[keep]), 1)[0])
    regime = "linear" if slope < LINEAR_REGIME_SLOPE else "sublinear"
    return RateFit(exponent=slope, floor=floor, regime=regime)


def check_dominance(
    means: Sequence[float],
    stderrs: Sequence[float],
    bounds: Sequence[Optional[float]],
    slack: float = 3.0,
) -> list[int]:
    """Индексы, где mean − slack·stderr превышает оценку."""
    violations = []
    for i, (mean, se, bound) in enumerate(zip(means, stderrs, bounds)):
        if bound is not None and mean - slack * se > bound:
            violations.append(i)
    if violations:
        logger.warning("Bound violated", count=len(violations), first=violations[0])
    return violations
