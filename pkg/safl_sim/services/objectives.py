"""Выпуклые задачи: потери, градиенты, эмпирический риск, кривизна и оптимумы."""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field

from safl_sim.errors import (
    ConvergenceError,
    DimensionMismatchError,
    EmptyDatasetError,
    PreconditionError,
    UnsupportedOperationError,
)

logger = structlog.get_logger()


class ObjectiveKind(str, Enum):
    LEAST_SQUARES = "least_squares"
    RIDGE = "ridge"
    LASSO = "lasso"
    LOGISTIC = "logistic"


SMOOTH_KINDS = frozenset({ObjectiveKind.LEAST_SQUARES, ObjectiveKind.RIDGE, ObjectiveKind.LOGISTIC})
REGULARIZED_KINDS = frozenset({ObjectiveKind.RIDGE, ObjectiveKind.LASSO, ObjectiveKind.LOGISTIC})


# ── Данные ───────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class Sample:
    """Один пример (x, y)."""
    x: np.ndarray
    y: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """Набор примеров; labels задают классы/группы для разбиения."""
    X: np.ndarray
    y: np.ndarray
    labels: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.X.ndim != 2:
            raise DimensionMismatchError(f"X must be 2-D, got shape {self.X.shape}")
        m = self.X.shape[0]
        if self.y.shape != (m,) or self.labels.shape != (m,):
            raise DimensionMismatchError("X, y and labels must have the same number of rows")
        if self.weights is not None and self.weights.shape != (m,):
            raise DimensionMismatchError("weights must have one entry per sample")

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.X[i], float(self.y[i]))

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def num_labels(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def normalized_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(len(self), 1.0 / len(self))
        return self.weights / self.weights.sum()

    def subset(self, idx: np.ndarray) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx], self.y[idx], self.labels[idx])

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(np.zeros((0, dim)), np.zeros(0), np.zeros(0, dtype=int))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], labels: Optional[Sequence[int]] = None) -> "Dataset":
        X = np.array([s.x for s in samples], dtype=float)
        y = np.array([s.y for s in samples], dtype=float)
        lab = np.zeros(len(samples), dtype=int) if labels is None else np.asarray(labels, dtype=int)
        return cls(X, y, lab)

    @classmethod
    def concat(cls, parts: Sequence["Dataset"], part_weights: Optional[Sequence[float]] = None) -> "Dataset":
        """Объединение; вес части k делится поровну между её примерами (η_k / m_k)."""
        X = np.vstack([p.X for p in parts])
        y = np.concatenate([p.y for p in parts])
        labels = np.concatenate([p.labels for p in parts])
        if part_weights is None:
            return cls(X, y, labels)
        weights = np.concatenate([
            np.full(len(p), eta / len(p)) for p, eta in zip(parts, part_weights) if len(p)
        ])
        return cls(X, y, labels, weights)


# ── Целевые функции ──────────────────────────────────────────


@dataclass(frozen=True)
class Objective:
    kind: ObjectiveKind
    dim: int
    reg: float = 0.0
    num_classes: int = 0

    def __post_init__(self) -> None:
        if self.kind in REGULARIZED_KINDS and self.reg <= 0:
            raise PreconditionError(f"{self.kind.value} needs reg > 0")
        if self.kind == ObjectiveKind.LOGISTIC and self.num_classes < 2:
            raise PreconditionError("logistic objective needs at least two classes")

    @property
    def param_dim(self) -> int:
        if self.kind == ObjectiveKind.LOGISTIC:
            return self.num_classes * self.dim
        return self.dim

    @property
    def is_smooth(self) -> bool:
        return self.kind in SMOOTH_KINDS

    @property
    def is_classifier(self) -> bool:
        return self.kind == ObjectiveKind.LOGISTIC


class ObjectiveSpec(BaseModel):
    """Секция objective файла эксперимента."""
    model_config = ConfigDict(extra="forbid")

    kind: ObjectiveKind = ObjectiveKind.RIDGE
    reg: float = Field(0.1, ge=0)


def class_count(y: np.ndarray) -> int:
    """Число классов C по целевым значениям; y должны быть целыми из [0, C)."""
    if y.size == 0:
        raise EmptyDatasetError("no samples to count classes")
    if not np.all(np.isfinite(y)) or np.any(y < 0) or np.any(y != np.round(y)):
        raise PreconditionError("class labels must be non-negative integers")
    return int(y.max()) + 1


def build_objective(spec: ObjectiveSpec, dim: int, y: Optional[np.ndarray] = None) -> Objective:
    """Задача по секции конфигурации; для logistic классы берутся из y."""
    classes = 0
    if spec.kind == ObjectiveKind.LOGISTIC:
        if y is None:
            raise PreconditionError("logistic objective needs the target column to count classes")
        classes = class_count(y)
    return Objective(kind=spec.kind, dim=dim, reg=spec.reg, num_classes=classes)


def _check_w(obj: Objective, w: np.ndarray) -> None:
    if w.shape != (obj.param_dim,):
        raise DimensionMismatchError(f"expected parameters of length {obj.param_dim}, got {w.shape}")


def _check_x(obj: Objective, x: np.ndarray) -> None:
    if x.shape != (obj.dim,):
        raise DimensionMismatchError(f"expected features of length {obj.dim}, got {x.shape}")


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _losses(obj: Objective, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Потери по примерам, векторно."""
    if obj.kind == ObjectiveKind.LOGISTIC:
        W = w.reshape(obj.num_classes, obj.dim)
        logits = X @ W.T
        top = logits.max(axis=1)
        lse = top + np.log(np.exp(logits - top[:, None]).sum(axis=1))
        picked = logits[np.arange(len(y)), y.astype(int)]
        return lse - picked + 0.5 * obj.reg * float(w @ w)

    r = X @ w - y
    if obj.kind == ObjectiveKind.LEAST_SQUARES:
        return 0.5 * r**2
    if obj.kind == ObjectiveKind.RIDGE:
        return 0.5 * r**2 + 0.5 * obj.reg * float(w @ w)
    # lasso: слагаемое стоимости из вводного примера
    return r**2 + obj.reg * float(np.abs(w).sum())


def _sample_grads(obj: Objective, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Матрица градиентов по примерам (m × param_dim)."""
    if obj.kind == ObjectiveKind.LASSO:
        raise UnsupportedOperationError("lasso objective is not differentiable; use optimum_oracle")
    if obj.kind == ObjectiveKind.LOGISTIC:
        W = w.reshape(obj.num_classes, obj.dim)
        P = _softmax_rows(X @ W.T)
        P[np.arange(len(y)), y.astype(int)] -= 1.0
        G = (P[:, :, None] * X[:, None, :]).reshape(len(y), -1)
        return G + obj.reg * w
    G = (X @ w - y)[:, None] * X
    if obj.kind == ObjectiveKind.RIDGE:
        G = G + obj.reg * w
    return G


def loss(obj: Objective, w: np.ndarray, s: Sample) -> float:
    _check_w(obj, w)
    _check_x(obj, s.x)
    return float(_losses(obj, w, s.x[None, :], np.array([s.y]))[0])


SampleGradient = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


def sample_gradient(obj: Objective) -> SampleGradient:
    """Градиент по одному примеру (w, x, y) без проверок размерностей.

    Для внутреннего цикла SGD: размерности проверяются один раз на эпоху.
    """
    if obj.kind == ObjectiveKind.LASSO:
        raise UnsupportedOperationError("lasso objective is not differentiable; use optimum_oracle")
    reg = obj.reg

    if obj.kind == ObjectiveKind.LOGISTIC:
        shape = (obj.num_classes, obj.dim)

        def logistic(w: np.ndarray, x: np.ndarray, y: float) -> np.ndarray:
            p = _softmax_rows(w.reshape(shape) @ x)
            p[int(y)] -= 1.0
            return np.outer(p, x).ravel() + reg * w

        return logistic

    if obj.kind == ObjectiveKind.RIDGE:

        def ridge(w: np.ndarray, x: np.ndarray, y: float) -> np.ndarray:
            return (float(x @ w) - y) * x + reg * w

        return ridge

    def least_squares(w: np.ndarray, x: np.ndarray, y: float) -> np.ndarray:
        return (float(x @ w) - y) * x

    return least_squares


def grad(obj: Objective, w: np.ndarray, s: Sample) -> np.ndarray:
    """Стохастический градиент по одному примеру."""
    _check_w(obj, w)
    _check_x(obj, s.x)
    return sample_gradient(obj)(w, s.x, s.y)


def empirical_risk(obj: Objective, w: np.ndarray, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise EmptyDatasetError("empirical risk of an empty dataset")
    _check_w(obj, w)
    if dataset.dim != obj.dim:
        raise DimensionMismatchError(f"dataset has {dataset.dim} features, objective expects {obj.dim}")
    return float(dataset.normalized_weights() @ _losses(obj, w, dataset.X, dataset.y))


def full_gradient(obj: Objective, w: np.ndarray, dataset: Dataset) -> np.ndarray:
    if len(dataset) == 0:
        raise EmptyDatasetError("gradient of an empty dataset")
    _check_w(obj, w)
    return dataset.normalized_weights() @ _sample_grads(obj, w, dataset.X, dataset.y)


def toy_cost(w: np.ndarray, dataset: Dataset, reg: float = 1.0) -> float:
    """Σ (y − xᵀw)² + reg·‖w‖₁; регуляризатор учитывается один раз."""
    r = dataset.y - dataset.X @ w
    return float(r @ r + reg * np.abs(w).sum())


def predict(obj: Objective, w: np.ndarray, X: np.ndarray) -> np.ndarray:
    if obj.kind == ObjectiveKind.LOGISTIC:
        return np.argmax(X @ w.reshape(obj.num_classes, obj.dim).T, axis=1)
    return X @ w


# ── Кривизна ─────────────────────────────────────────────────


@dataclass(frozen=True)
class CurvatureBounds:
    mu: float
    lam: float
    sigma_sq: float

    def __post_init__(self) -> None:
        if self.mu < 0 or self.lam < self.mu or self.sigma_sq < 0:
            raise PreconditionError(f"invalid curvature bounds: {self}")


def _design_eigenvalues(dataset: Dataset) -> np.ndarray:
    wts = dataset.normalized_weights()
    gram = dataset.X.T @ (wts[:, None] * dataset.X)
    return np.linalg.eigvalsh(gram)


def curvature(obj: Objective, dataset: Dataset, w_star: Optional[np.ndarray] = None) -> CurvatureBounds:
    """μ, λ гессиана и σ² разброса градиентов в оптимуме."""
    if not obj.is_smooth:
        raise UnsupportedOperationError(f"curvature is undefined for {obj.kind.value}")
    if len(dataset) == 0:
        raise EmptyDatasetError("curvature of an empty dataset")

    eig = _design_eigenvalues(dataset)
    if obj.kind == ObjectiveKind.LOGISTIC:
        # ‖diag(p) − ppᵀ‖ ≤ ½, оценки глобальные
        mu, lam = obj.reg, 0.5 * float(eig[-1]) + obj.reg
    else:
        reg = obj.reg if obj.kind == ObjectiveKind.RIDGE else 0.0
        mu, lam = max(float(eig[0]), 0.0) + reg, float(eig[-1]) + reg

    w0 = optimum_oracle(obj, dataset) if w_star is None else w_star
    G = _sample_grads(obj, w0, dataset.X, dataset.y)
    mean = dataset.normalized_weights() @ G
    sigma_sq = float(np.max(np.sum((G - mean) ** 2, axis=1)))
    return CurvatureBounds(mu=mu, lam=max(lam, mu), sigma_sq=sigma_sq)


# ── Оптимумы ─────────────────────────────────────────────────


def _soft_threshold(value: float, threshold: float) -> float:
    return float(np.sign(value) * max(abs(value) - threshold, 0.0))


def _lasso_coordinate_descent(dataset: Dataset, reg: float, max_sweeps: int = 10_000) -> np.ndarray:
    X, y = dataset.X, dataset.y
    w = np.zeros(dataset.dim)
    col_sq = 2.0 * np.sum(X**2, axis=0)
    for _ in range(max_sweeps):
        change = 0.0
        for j in range(dataset.dim):
            if col_sq[j] == 0.0:
                new = 0.0
            else:
                others = np.arange(dataset.dim) != j
                partial = y - X[:, others] @ w[others]
                new = _soft_threshold(2.0 * float(X[:, j] @ partial), reg) / col_sq[j]
            change = max(change, abs(new - w[j]))
            w[j] = new
        if change == 0.0:
            return w
    if change > 1e-12:
        raise ConvergenceError(f"lasso coordinate descent did not settle (last change {change:.3e})")
    return w


def _logistic_descent(obj: Objective, dataset: Dataset, tol: float, max_iter: int) -> np.ndarray:
    step = 1.0 / curvature_upper(obj, dataset)
    w = np.zeros(obj.param_dim)
    for it in range(max_iter):
        g = full_gradient(obj, w, dataset)
        norm = float(np.linalg.norm(g))
        if norm <= tol:
            logger.debug("Logistic optimum found", iterations=it, grad_norm=norm)
            return w
        w = w - step * g
    raise ConvergenceError(f"logistic optimum not reached in {max_iter} iterations (grad norm {norm:.3e})")


def curvature_upper(obj: Objective, dataset: Dataset) -> float:
    """Верхняя оценка λ без вычисления σ²."""
    top = float(_design_eigenvalues(dataset)[-1])
    if obj.kind == ObjectiveKind.LOGISTIC:
        return 0.5 * top + obj.reg
    return top + (obj.reg if obj.kind == ObjectiveKind.RIDGE else 0.0)


def optimum_oracle(
    obj: Objective,
    dataset: Dataset,
    tol: float = 1e-10,
    max_iter: int = 200_000,
) -> np.ndarray:
    """Точка минимума эмпирического риска (для lasso: минимум toy_cost)."""
    if len(dataset) == 0:
        raise EmptyDatasetError("optimum of an empty dataset")
    if dataset.dim != obj.dim:
        raise DimensionMismatchError(f"dataset has {dataset.dim} features, objective expects {obj.dim}")

    if obj.kind == ObjectiveKind.LASSO:
        return _lasso_coordinate_descent(dataset, obj.reg)
    if obj.kind == ObjectiveKind.LOGISTIC:
        return _logistic_descent(obj, dataset, tol, max_iter)

    wts = dataset.normalized_weights()
    gram = dataset.X.T @ (wts[:, None] * dataset.X)
    rhs = dataset.X.T @ (wts * dataset.y)
    if obj.kind == ObjectiveKind.RIDGE:
        return np.linalg.solve(gram + obj.reg * np.eye(obj.dim), rhs)
    root = np.sqrt(wts)
    solution, *_ = np.linalg.lstsq(root[:, None] * dataset.X, root * dataset.y, rcond=None)
    return solution
