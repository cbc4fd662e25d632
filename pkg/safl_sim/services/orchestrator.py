"""Цикл раундов: выбор устройств, приём z̄, локальное обучение, отправка, агрегация."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from safl_sim.config import settings
from safl_sim.errors import ConfigError, DivergenceError, PreconditionError
from safl_sim.services.aggregator import Update, WeightKind, WeightScheme, aggregate, weights
from safl_sim.services.datasets import DatasetKind, DatasetSpec, build_dataset, toy_datasets
from safl_sim.services.local_trainer import LrSchedule, Sampling, ScheduleKind, run_local_epochs
from safl_sim.services.objectives import (
    CurvatureBounds,
    Dataset,
    Objective,
    ObjectiveKind,
    ObjectiveSpec,
    REGULARIZED_KINDS,
    build_objective,
    curvature,
    optimum_oracle,
)
from safl_sim.services.partitioner import PartitionSpec, Shard, partition
from safl_sim.services.sa_mixer import AnnealClock, AnnealConfig, mix, sample_mask, selection_probability
from safl_sim.services.upload_gate import (
    GateConfig,
    GateReference,
    GateState,
    accuracy_proxy,
    decide_upload,
    performance_gap,
    upload_probability,
)
from safl_sim.services.verifier import BoundInputs
from safl_sim.utils.helpers import DeviceStream, Stream, device_rng, make_rng

logger = structlog.get_logger()


class Algorithm(str, Enum):
    FEDAVG = "fedavg"
    SAFL = "safl"
    SAFL_EXTENDED = "safl_extended"


class LocalSolver(str, Enum):
    SGD = "sgd"
    ORACLE = "oracle"


# ═══════════════════════════════════════════════════════════════
#  Конфигурация
# ═══════════════════════════════════════════════════════════════


class SimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(ge=1)
    # устройств в раунде; None = все n
    s: Optional[int] = Field(None, ge=1)
    T: int = Field(50, ge=0)
    E: int = Field(1, ge=1)
    algorithm: Algorithm = Algorithm.SAFL
    seed: int = Field(0, ge=0, lt=2**64)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    objective: ObjectiveSpec = Field(default_factory=ObjectiveSpec)
    partition: PartitionSpec
    anneal: AnnealConfig = Field(default_factory=AnnealConfig)
    gate: GateConfig = Field(default_factory=GateConfig)
    weights: WeightScheme = Field(default_factory=WeightScheme)
    lr: LrSchedule = Field(default_factory=LrSchedule)
    sampling: Sampling = Sampling.IID
    local_solver: LocalSolver = LocalSolver.SGD
    init_scale: float = Field(0.1, ge=0)
    mse_threshold: Optional[float] = Field(None, gt=0)
    strict_theorem_checks: bool = False

    @model_validator(mode="before")
    @classmethod
    def _inherit_device_count(cls, data: Any) -> Any:
        if isinstance(data, dict) and "n" in data:
            part = data.get("partition")
            if part is None:
                data = {**data, "partition": {"n": data["n"]}}
            elif isinstance(part, dict) and "n" not in part:
                data = {**data, "partition": {**part, "n": data["n"]}}
        return data

    @model_validator(mode="after")
    def _check_consistency(self) -> "SimConfig":
        if self.s is not None and self.s > self.n:
            raise ValueError(f"s={self.s} must satisfy 1 ≤ s ≤ n={self.n}")
        if self.partition.n != self.n:
            raise ValueError(f"partition.n={self.partition.n} differs from n={self.n}")
        if self.objective.kind in REGULARIZED_KINDS and self.objective.reg <= 0:
            raise ValueError(f"objective.reg must be > 0 for {self.objective.kind.value}")
        if self.objective.kind == ObjectiveKind.LASSO and self.local_solver != LocalSolver.ORACLE:
            raise ValueError("lasso objective is not differentiable; set local_solver to 'oracle'")
        if self.objective.kind == ObjectiveKind.LOGISTIC and self.dataset.kind in (
            DatasetKind.SYNTHETIC_REGRESSION,
            DatasetKind.TOY,
        ):
            raise ValueError("logistic objective needs a classification dataset")
        if self.dataset.kind == DatasetKind.TOY and self.n != 2:
            raise ValueError("the toy dataset has exactly two devices; set n = 2")
        return self

    @property
    def selected(self) -> int:
        return self.s if self.s is not None else self.n


# ═══════════════════════════════════════════════════════════════
#  Состояние
# ═══════════════════════════════════════════════════════════════


@dataclass(eq=False)
class DeviceState:
    device_id: int
    w: np.ndarray
    shard: Shard
    sgd_rng: np.random.Generator
    mask_rng: np.random.Generator
    gate_rng: np.random.Generator
    gate: GateState = field(default_factory=GateState)
    steps: int = 0
    # δ_t: получил ли z̄ в текущем раунде
    received: bool = False

    @property
    def train(self) -> Dataset:
        return self.shard.train

    @property
    def holdout(self) -> Dataset:
        return self.shard.holdout

    @property
    def eval_set(self) -> Dataset:
        return self.holdout if len(self.holdout) else self.train


@dataclass
class ServerState:
    z_bar: Optional[np.ndarray] = None
    round_index: int = 0


@dataclass(frozen=True)
class RoundRecord:
    round: int
    mse: float
    accuracy: float
    uploads: int
    p: float
    expected_uploads: float
    selected: int
    # отправки устройств с однородными метками
    biased_uploads: int = 0


@dataclass(frozen=True, eq=False)
class DeviceOutcome:
    update: Update
    uploaded: bool
    q: float
    biased: bool = False


def global_estimate(devices: Sequence[DeviceState], eta: Sequence[float]) -> np.ndarray:
    """ŵ = Σ η_k w_k по текущим моделям устройств."""
    updates = [Update(d.device_id, d.w, len(d.train)) for d in devices]
    return aggregate(updates, eta)


def static_weights(scheme: WeightScheme, shards: Sequence[Shard]) -> np.ndarray:
    """η по всем устройствам: для w*, ŵ и оценок. IDA здесь равномерна."""
    n = len(shards)
    if scheme.kind == WeightKind.SIZE_PROPORTIONAL:
        raw = np.array([len(s.train) for s in shards], dtype=float)
    elif scheme.kind == WeightKind.CUSTOM:
        if len(scheme.custom) < n:
            raise ConfigError("weights.custom", f"needs {n} entries, got {len(scheme.custom)}")
        raw = np.array(scheme.custom[:n], dtype=float)
        if raw.sum() <= 0:
            raise ConfigError("weights.custom", "all weights are zero")
    else:
        raw = np.ones(n)
    return raw / raw.sum()


# ═══════════════════════════════════════════════════════════════
#  Федерация
# ═══════════════════════════════════════════════════════════════


@dataclass(eq=False)
class Federation:
    config: SimConfig
    objective: Objective
    devices: list[DeviceState]
    server: ServerState
    w_star: np.ndarray
    eval_set: Dataset
    eta: np.ndarray
    init_vectors: list[np.ndarray]
    server_rng: np.random.Generator
    workers: int = 1
    _curvature: Optional[list[CurvatureBounds]] = field(default=None, repr=False)

    @classmethod
    def prepare(cls, config: SimConfig, workers: Optional[int] = None) -> "Federation":
        seed = config.seed
        pool, test = build_dataset(config.dataset, make_rng(seed, Stream.DATA))

        if config.dataset.kind == DatasetKind.TOY:
            d1, d2 = toy_datasets()
            shards = [
                Shard(0, (0,), d1, Dataset.empty(2)),
                Shard(1, (1,), d2, Dataset.empty(2)),
            ]
        else:
            part_seed = config.partition.seed if config.partition.seed is not None else seed
            shards = partition(pool, config.partition, make_rng(part_seed, Stream.PARTITION))

        objective = build_objective(config.objective, pool.dim, pool.y)
        eta = static_weights(config.weights, shards)
        union = Dataset.concat([s.train for s in shards], eta)
        w_star = optimum_oracle(objective, union)

        init_vectors = [
            config.init_scale * make_rng(seed, Stream.INIT, k).standard_normal(objective.param_dim)
            for k in range(config.n)
        ]
        devices = [
            DeviceState(
                device_id=k,
                w=init_vectors[k].copy(),
                shard=shard,
                sgd_rng=device_rng(seed, k, DeviceStream.SGD),
                mask_rng=device_rng(seed, k, DeviceStream.MASK),
                gate_rng=device_rng(seed, k, DeviceStream.GATE),
            )
            for k, shard in enumerate(shards)
        ]

        federation = cls(
            config=config,
            objective=objective,
            devices=devices,
            server=ServerState(),
            w_star=w_star,
            eval_set=test if len(test) else union,
            eta=eta,
            init_vectors=init_vectors,
            server_rng=make_rng(seed, Stream.SERVER),
            workers=workers or settings.workers,
        )
        if config.strict_theorem_checks:
            federation._check_schedule()

        logger.info(
            "Federation prepared",
            algorithm=config.algorithm.value,
            devices=config.n,
            selected=config.selected,
            objective=objective.kind.value,
            seed=seed,
        )
        return federation

    # ── Константы задачи ─────────────────────────────────────

    def device_curvature(self) -> list[CurvatureBounds]:
        """μ, λ, σ² каждого устройства; σ² в глобальном оптимуме w*."""
        if self._curvature is None:
            self._curvature = [curvature(self.objective, d.train, self.w_star) for d in self.devices]
        return self._curvature

    def bound_inputs(self) -> Optional[BoundInputs]:
        return BoundInputs.from_federation(self)

    def _check_schedule(self) -> None:
        inputs = self.bound_inputs()
        if inputs is None:
            raise ConfigError("objective.kind", "theorem checks need a smooth objective")
        try:
            if self.config.lr.kind == ScheduleKind.CONSTANT:
                self.config.lr.check_theorem1(CurvatureBounds(inputs.mu, inputs.lam, 0.0))
            else:
                self.config.lr.check_corollary1(inputs.mu)
        except PreconditionError as exc:
            raise ConfigError("lr.alpha", str(exc)) from exc

    # ── Раунды ───────────────────────────────────────────────

    def _device_round(self, device: DeviceState, z_bar: Optional[np.ndarray], r: int, p: float) -> DeviceOutcome:
        cfg = self.config
        obj = self.objective

        device.received = z_bar is not None
        if device.received:
            if cfg.algorithm == Algorithm.FEDAVG:
                device.w = z_bar.copy()
            else:
                if cfg.anneal.clock == AnnealClock.LOCAL_STEPS:
                    p = selection_probability(device.steps, cfg.anneal.L)
                u = sample_mask(len(device.w), p, cfg.anneal.epsilon, device.mask_rng, cfg.anneal.mask_mode)
                device.w = mix(u, z_bar, device.w)
        start = device.w

        try:
            if cfg.local_solver == LocalSolver.ORACLE:
                z = optimum_oracle(obj, device.train)
            else:
                z, _ = run_local_epochs(device, obj, cfg.E, cfg.lr, cfg.sampling)
        except DivergenceError as exc:
            raise DivergenceError(f"device {device.device_id}: {exc}", round_index=r) from exc
        device.w = z

        uploaded = True
        if cfg.algorithm == Algorithm.SAFL_EXTENDED:
            if device.received:
                # без обратной связи q остаётся прежним
                kind = cfg.gate.proxy_for(obj)
                reference = z_bar if cfg.gate.reference == GateReference.RECEIVED else start
                h_global = accuracy_proxy(reference, device.eval_set, obj, kind)
                h_local = accuracy_proxy(z, device.eval_set, obj, kind)
                delta = performance_gap(h_global, h_local, cfg.gate.eps_div)
                device.gate = GateState(q=upload_probability(delta, cfg.gate.nu), delta=delta)
            uploaded = decide_upload(device.gate.q, device.gate_rng)
        return DeviceOutcome(Update(device.device_id, z, len(device.train)), uploaded, device.gate.q, device.shard.biased)

    def _map_devices(self, chosen: list[DeviceState], z_bar: Optional[np.ndarray], r: int, p: float) -> list[DeviceOutcome]:
        if self.workers <= 1 or len(chosen) <= 1:
            return [self._device_round(d, z_bar, r, p) for d in chosen]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(lambda d: self._device_round(d, z_bar, r, p), chosen))

    def _estimate_weights(self) -> list[float]:
        if self.config.weights.kind == WeightKind.IDA and self.server.z_bar is not None:
            updates = [Update(d.device_id, d.w, len(d.train)) for d in self.devices]
            return weights(self.config.weights, updates, z_ref=self.server.z_bar)
        return [float(v) for v in self.eta]

    def global_estimate(self) -> np.ndarray:
        return global_estimate(self.devices, self._estimate_weights())

    def run_round(self, r: int) -> RoundRecord:
        cfg = self.config
        p = selection_probability(r, cfg.anneal.L)
        selected = np.sort(self.server_rng.choice(cfg.n, size=cfg.selected, replace=False))
        z_bar = self.server.z_bar

        outcomes = self._map_devices([self.devices[k] for k in selected], z_bar, r, p)
        received = [o.update for o in outcomes if o.uploaded]

        if received:
            if cfg.weights.kind == WeightKind.IDA and z_bar is None:
                eta = weights(WeightScheme(), received)
            else:
                eta = weights(cfg.weights, received, z_ref=z_bar)
            new_z = aggregate(received, eta)
            if not np.all(np.isfinite(new_z)):
                raise DivergenceError("non-finite global model after aggregation", round_index=r)
            self.server.z_bar = new_z
        else:
            logger.warning("No updates received, global model kept", round=r)
        self.server.round_index = r

        estimate = self.global_estimate()
        record = RoundRecord(
            round=r,
            mse=float(np.sum((estimate - self.w_star) ** 2)),
            accuracy=accuracy_proxy(estimate, self.eval_set, self.objective, cfg.gate.proxy_for(self.objective)),
            uploads=len(received),
            p=p,
            expected_uploads=float(sum(o.q for o in outcomes)),
            selected=len(outcomes),
            biased_uploads=sum(1 for o in outcomes if o.uploaded and o.biased),
        )
        logger.debug("Round done", round=r, mse=record.mse, uploads=record.uploads, p=p)
        return record

    def run(self) -> list[RoundRecord]:
        records: list[RoundRecord] = []
        threshold = self.config.mse_threshold
        for r in range(1, self.config.T + 1):
            record = self.run_round(r)
            records.append(record)
            if threshold is not None and record.mse < threshold:
                logger.info("Early stop: mse below threshold", round=r, mse=record.mse, threshold=threshold)
                break
        return records


def run(config: SimConfig, workers: Optional[int] = None) -> list[RoundRecord]:
    return Federation.prepare(config, workers).run()
