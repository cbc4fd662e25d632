"""Команда run: прогон вариантов алгоритма на общих сидах и запись метрик."""

import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from safl_sim.config import settings
from safl_sim.errors import (
    ConfigError,
    ConvergenceError,
    DimensionMismatchError,
    DivergenceError,
    EmptyDatasetError,
    ExitCode,
    PreconditionError,
    UnsupportedOperationError,
)
from safl_sim.metrics import MetricsRow, SummaryRow, write_metrics, write_summary
from safl_sim.services.local_trainer import ScheduleKind
from safl_sim.services.orchestrator import Algorithm, Federation, RoundRecord, SimConfig
from safl_sim.services.verifier import (
    corollary1_bound,
    corollary1_constant,
    fit_rate,
    theorem1_bound,
    theorem3_bound,
    theorem3_constant,
)
from safl_sim.utils import texts
from safl_sim.utils.helpers import mean_and_stderr

logger = structlog.get_logger()


class Variant(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = Field(min_length=1)
    algorithm: Algorithm
    # частичные переопределения ключей SimConfig, например {"anneal": {"L": 10}}
    overrides: dict[str, Any] = Field(default_factory=dict)


class ExperimentFile(SimConfig):
    """Файл эксперимента: общая конфигурация, сиды и список вариантов."""

    name: str = "experiment"
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    variants: list[Variant] = Field(min_length=1)

    @model_validator(mode="after")
    def _unique_variants(self) -> "ExperimentFile":
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ValueError("variant names must be unique")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        return self

    def variant_config(self, variant: Variant, seed: int) -> SimConfig:
        base = self.model_dump(exclude={"name", "seeds", "variants"})
        merged = _deep_merge(base, variant.overrides)
        part_override = variant.overrides.get("partition", {})
        if "n" in variant.overrides and "n" not in part_override:
            merged["partition"]["n"] = merged["n"]
        merged["algorithm"] = variant.algorithm
        merged["seed"] = seed
        return SimConfig.model_validate(merged)


def _deep_merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    result = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = _deep_merge(result[key], value)
        else:
            result[key] = value
    return result


def format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        parts.append(f"{loc}: {err['msg']}" if loc else err["msg"])
    return "; ".join(parts)


def load_experiment(path: str | Path) -> ExperimentFile:
    text = Path(path).read_text(encoding="utf-8")
    return ExperimentFile.model_validate_json(text)


# ═══════════════════════════════════════════════════════════
# ОЦЕНКИ И СВОДКА
# ═══════════════════════════════════════════════════════════


def bound_columns(
    federation: Federation,
    records: Sequence[RoundRecord],
) -> list[tuple[Optional[float], Optional[float], Optional[float]]]:
    """Оценки для каждого раунда; пусто, если условия теорем не выполнены."""
    inputs = federation.bound_inputs()
    empty = [(None, None, None)] * len(records)
    if inputs is None:
        return empty

    if inputs.schedule == ScheduleKind.CONSTANT:
        try:
            return [(theorem1_bound(inputs, rec.round), None, None) for rec in records]
        except PreconditionError as exc:
            logger.debug("Constant-rate bound skipped", reason=str(exc))
            return empty

    c1 = c3 = None
    try:
        c1 = corollary1_constant(inputs)
    except PreconditionError as exc:
        logger.debug("O(1/t) bound skipped", reason=str(exc))
    try:
        c3 = theorem3_constant(inputs)
    except PreconditionError as exc:
        logger.debug("Weighted-error bound skipped", reason=str(exc))
    return [
        (
            None,
            corollary1_bound(c1, rec.round) if c1 is not None else None,
            theorem3_bound(c3, rec.round) if c3 is not None else None,
        )
        for rec in records
    ]


def metrics_rows(variant: str, seed: int, federation: Federation, records: Sequence[RoundRecord]) -> list[MetricsRow]:
    rows = []
    uploads = 0
    for rec, (b1, bc1, b3) in zip(records, bound_columns(federation, records)):
        uploads += rec.uploads
        rows.append(MetricsRow(
            variant=variant,
            seed=seed,
            round=rec.round,
            mse=rec.mse,
            accuracy_proxy=rec.accuracy,
            uploads_cumulative=uploads,
            p=rec.p,
            bound_theorem1=b1,
            bound_corollary1=bc1,
            bound_theorem3=b3,
        ))
    return rows


def summarize(variant: str, config: SimConfig, runs: Sequence[Sequence[RoundRecord]]) -> SummaryRow:
    finished = [records for records in runs if records]
    mse_mean, mse_se = mean_and_stderr([r[-1].mse for r in finished])
    acc_mean, _ = mean_and_stderr([r[-1].accuracy for r in finished])
    uploads = [sum(rec.uploads for rec in r) for r in finished]
    expected = [sum(rec.expected_uploads for rec in r) for r in finished]
    ratios = [u / (config.n * len(r)) for u, r in zip(uploads, finished)]
    biased = config.partition.biased_devices
    biased_ratio = None
    if biased and finished:
        biased_ratio = mean_and_stderr(
            [sum(rec.biased_uploads for rec in r) / (biased * len(r)) for r in finished]
        )[0]

    rate = None
    if finished:
        length = min(len(r) for r in finished)
        series = np.mean([[rec.mse for rec in r[:length]] for r in finished], axis=0)
        rounds = [rec.round for rec in finished[0][:length]]
        try:
            rate = fit_rate(series, decaying=config.lr.kind == ScheduleKind.INVERSE, rounds=rounds).exponent
        except PreconditionError as exc:
            logger.debug("Rate fit skipped", variant=variant, reason=str(exc))

    return SummaryRow(
        variant=variant,
        seeds=len(runs),
        rounds=max((len(r) for r in runs), default=0),
        final_mse_mean=mse_mean,
        final_mse_stderr=mse_se,
        final_accuracy_mean=acc_mean,
        uploads_mean=mean_and_stderr(uploads)[0],
        upload_ratio=mean_and_stderr(ratios)[0],
        expected_uploads_mean=mean_and_stderr(expected)[0],
        biased_upload_ratio=biased_ratio,
        rate_exponent=rate,
    )


# ═══════════════════════════════════════════════════════════
# КОМАНДА
# ═══════════════════════════════════════════════════════════


def _fail(template: str, error: str, code: ExitCode) -> int:
    logger.error("Experiment failed", error=error, exit_code=int(code))
    print(template.format(error=error), file=sys.stderr)
    return int(code)


def execute(
    experiment: ExperimentFile,
    out_dir: Path,
    seed_override: Optional[int] = None,
    variants: Optional[Sequence[str]] = None,
    workers: Optional[int] = None,
) -> list[SummaryRow]:
    chosen = experiment.variants
    if variants:
        available = [v.name for v in experiment.variants]
        unknown = sorted(set(variants) - set(available))
        if unknown:
            raise ConfigError("variants", texts.UNKNOWN_VARIANTS.format(names=unknown, available=available))
        chosen = [v for v in experiment.variants if v.name in variants]
    seeds = [seed_override] if seed_override is not None else experiment.seeds

    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    for variant in chosen:
        rows: list[MetricsRow] = []
        runs = []
        config = None
        for seed in seeds:
            config = experiment.variant_config(variant, seed)
            federation = Federation.prepare(config, workers)
            records = federation.run()
            runs.append(records)
            rows.extend(metrics_rows(variant.name, seed, federation, records))
        write_metrics(out_dir / f"{variant.name}.csv", rows)
        summary = summarize(variant.name, config, runs)
        summaries.append(summary)
        logger.info(
            "Variant done",
            variant=variant.name,
            seeds=len(seeds),
            final_mse=summary.final_mse_mean,
            upload_ratio=summary.upload_ratio,
        )
    write_summary(out_dir / "summary.csv", summaries)
    return summaries


def run_experiment(
    path: str | Path,
    out_dir: Optional[str | Path] = None,
    seed_override: Optional[int] = None,
    variants: Optional[Sequence[str]] = None,
    workers: Optional[int] = None,
) -> int:
    """Код выхода: 0 успех, 1 конфигурация, 2 расходимость, 3 ввод-вывод."""
    out = Path(out_dir or settings.out_dir)
    try:
        experiment = load_experiment(path)
        summaries = execute(experiment, out, seed_override, variants, workers)
    except ValidationError as exc:
        return _fail(texts.CONFIG_ERROR, format_validation_error(exc), ExitCode.CONFIG)
    except (
        ConfigError,
        PreconditionError,
        UnsupportedOperationError,
        DimensionMismatchError,
        EmptyDatasetError,
    ) as exc:
        return _fail(texts.CONFIG_ERROR, str(exc), ExitCode.CONFIG)
    except (DivergenceError, ConvergenceError) as exc:
        return _fail(texts.DIVERGENCE_ERROR, str(exc), ExitCode.DIVERGENCE)
    except OSError as exc:
        return _fail(texts.IO_ERROR, str(exc), ExitCode.IO)

    seeds = 1 if seed_override is not None else len(experiment.seeds)
    logger.info("Experiment finished", name=experiment.name, out=str(out))
    print(texts.RUN_DONE.format(variants=len(summaries), seeds=seeds, out=out))
    return int(ExitCode.OK)
