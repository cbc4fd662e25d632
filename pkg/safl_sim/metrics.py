"""Хранение результатов: CSV метрик по раундам и сводка по вариантам."""

import csv
import io
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional

from safl_sim.errors import ConfigError
from safl_sim.utils.helpers import format_float, parse_float


@dataclass(frozen=True)
class MetricsRow:
    variant: str
    seed: int
    round: int
    mse: float
    accuracy_proxy: float
    uploads_cumulative: int
    p: float
    bound_theorem1: Optional[float] = None
    bound_corollary1: Optional[float] = None
    bound_theorem3: Optional[float] = None


METRICS_COLUMNS = tuple(f.name for f in fields(MetricsRow))


@dataclass(frozen=True)
class SummaryRow:
    variant: str
    seeds: int
    rounds: int
    final_mse_mean: float
    final_mse_stderr: float
    final_accuracy_mean: float
    uploads_mean: float
    upload_ratio: float
    expected_uploads_mean: float
    # доля отправок устройств с однородными метками от biased·T; пусто без таких устройств
    biased_upload_ratio: Optional[float] = None
    rate_exponent: Optional[float] = None


SUMMARY_COLUMNS = tuple(f.name for f in fields(SummaryRow))


def _cell(value) -> str:
    if value is None or isinstance(value, float):
        return format_float(value)
    return str(value)


def emit_rows(rows: Iterable[MetricsRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for row in rows:
        writer.writerow([_cell(v) for v in astuple(row)])
    return buffer.getvalue()


def parse_rows(text: str, source: str = "<metrics>") -> list[MetricsRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != METRICS_COLUMNS:
        raise ConfigError(source, f"expected header {','.join(METRICS_COLUMNS)}")

    rows = []
    for lineno, cells in enumerate(reader, start=2):
        if len(cells) != len(METRICS_COLUMNS):
            raise ConfigError(source, f"line {lineno}: expected {len(METRICS_COLUMNS)} cells")
        try:
            rows.append(MetricsRow(
                variant=cells[0],
                seed=int(cells[1]),
                round=int(cells[2]),
                mse=float(cells[3]),
                accuracy_proxy=float(cells[4]),
                uploads_cumulative=int(cells[5]),
                p=float(cells[6]),
                bound_theorem1=parse_float(cells[7]),
                bound_corollary1=parse_float(cells[8]),
                bound_theorem3=parse_float(cells[9]),
            ))
        except ValueError as exc:
            raise ConfigError(source, f"line {lineno}: {exc}") from exc
    _check_contiguous(rows, source)
    return rows


def _check_contiguous(rows: list[MetricsRow], source: str) -> None:
    """Раунды каждой пары (variant, seed) идут подряд с 1."""
    expected: dict[tuple[str, int], int] = {}
    for row in rows:
        key = (row.variant, row.seed)
        want = expected.get(key, 0) + 1
        if row.round != want:
            raise ConfigError(source, f"{row.variant} seed {row.seed}: round {row.round}, expected {want}")
        expected[key] = want


def write_metrics(path: str | Path, rows: Iterable[MetricsRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(emit_rows(rows))


def read_metrics(path: str | Path) -> list[MetricsRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_rows(fh.read(), source=str(path))


def write_summary(path: str | Path, rows: Iterable[SummaryRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([_cell(v) for v in astuple(row)])
