"""Команда compare: сводная таблица по нескольким файлам метрик."""

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, TextIO

import numpy as np
import structlog

from safl_sim.errors import ConfigError, ExitCode
from safl_sim.metrics import MetricsRow, read_metrics
from safl_sim.utils import texts
from safl_sim.utils.helpers import mean_and_stderr

logger = structlog.get_logger()


@dataclass
class CompareReport:
    labels: list[str]
    rounds: list[int]
    # label -> [(mse_mean, mse_se, acc_mean, acc_se)] по rounds
    stats: dict[str, list[tuple[float, float, float, float]]] = field(default_factory=dict)
    # label -> медиана номера раунда, inf если порог не достигнут
    rounds_to_threshold: dict[str, float] = field(default_factory=dict)
    reached: dict[str, tuple[int, int]] = field(default_factory=dict)

    def difference(self, label: str) -> list[float]:
        """Разность средних mse относительно первой метки."""
        base = self.stats[self.labels[0]]
        return [own[0] - ref[0] for own, ref in zip(self.stats[label], base)]


def _group(tables: Sequence[tuple[Path, list[MetricsRow]]]) -> dict[str, dict[int, dict[int, MetricsRow]]]:
    grouped: dict[str, dict[int, dict[int, MetricsRow]]] = {}
    for path, rows in tables:
        local: dict[str, dict[int, dict[int, MetricsRow]]] = {}
        for row in rows:
            local.setdefault(row.variant, {}).setdefault(row.seed, {})[row.round] = row
        for variant, by_seed in local.items():
            label = variant if variant not in grouped else f"{path.stem}:{variant}"
            suffix = 2
            while label in grouped:
                label = f"{path.stem}:{variant}#{suffix}"
                suffix += 1
            grouped[label] = by_seed
    return grouped


def build_report(tables: Sequence[tuple[Path, list[MetricsRow]]], threshold: Optional[float] = None) -> CompareReport:
    grouped = _group(tables)
    common: Optional[set[int]] = None
    for by_seed in grouped.values():
        for by_round in by_seed.values():
            common = set(by_round) if common is None else common & set(by_round)
    if not common:
        raise ConfigError("metrics", texts.INCOMPATIBLE_GRIDS)

    report = CompareReport(labels=list(grouped), rounds=sorted(common))
    for label, by_seed in grouped.items():
        per_round = []
        for r in report.rounds:
            mse = mean_and_stderr([rounds[r].mse for rounds in by_seed.values()])
            acc = mean_and_stderr([rounds[r].accuracy_proxy for rounds in by_seed.values()])
            per_round.append((*mse, *acc))
        report.stats[label] = per_round

        if threshold is not None:
            hits = []
            for rounds in by_seed.values():
                first = next((r for r in sorted(rounds) if rounds[r].mse < threshold), None)
                hits.append(float(first) if first is not None else np.inf)
            report.rounds_to_threshold[label] = float(np.median(hits))
            report.reached[label] = (int(np.isfinite(hits).sum()), len(hits))
    return report


def print_report(report: CompareReport, threshold: Optional[float], out: TextIO) -> None:
    print(texts.COMPARE_HEADER, file=out)
    header = ["round"]
    for label in report.labels:
        header += [f"{label}.mse", f"{label}.acc", f"{label}.dmse"]
    print("\t".join(header), file=out)

    diffs = {label: report.difference(label) for label in report.labels}
    for i, r in enumerate(report.rounds):
        cells = [str(r)]
        for label in report.labels:
            mse, mse_se, acc, acc_se = report.stats[label][i]
            cells += [f"{mse:.6e}±{mse_se:.2e}", f"{acc:.4f}±{acc_se:.4f}", f"{diffs[label][i]:+.3e}"]
        print("\t".join(cells), file=out)

    if threshold is not None:
        print(file=out)
        print(texts.THRESHOLD_HEADER.format(threshold=threshold), file=out)
        for label in report.labels:
            median = report.rounds_to_threshold[label]
            reached, total = report.reached[label]
            shown = f"{median:g}" if np.isfinite(median) else texts.NEVER
            print(texts.THRESHOLD_ROW.format(label=label, median=shown, reached=reached, total=total), file=out)


def compare(paths: Sequence[str | Path], threshold: Optional[float] = None, out: Optional[TextIO] = None) -> int:
    out = out or sys.stdout
    if len(paths) < 2:
        print(texts.COMPARE_USAGE, file=sys.stderr)
        return int(ExitCode.CONFIG)
    try:
        tables = [(Path(p), read_metrics(p)) for p in paths]
        report = build_report(tables, threshold)
    except ConfigError as exc:
        logger.error("Compare failed", error=str(exc))
        print(texts.CONFIG_ERROR.format(error=exc), file=sys.stderr)
        return int(ExitCode.CONFIG)
    except OSError as exc:
        logger.error("Compare failed", error=str(exc))
        print(texts.IO_ERROR.format(error=exc), file=sys.stderr)
        return int(ExitCode.IO)

    print_report(report, threshold, out)
    return int(ExitCode.OK)
