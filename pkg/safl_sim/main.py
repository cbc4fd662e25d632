"""Точка входа симулятора: python -m safl_sim.main {run,compare} ..."""

import argparse
import logging
import sys
from typing import Optional, Sequence

import structlog

from safl_sim.config import settings
from safl_sim.handlers import compare, experiment
from safl_sim.utils.helpers import parse_variants


def setup_logging(level: Optional[str] = None) -> None:
    """Настройка structlog + стандартного logging; логи в stderr, отчёты в stdout."""
    level_name = (level or settings.log_level).upper()
    numeric = getattr(logging, level_name)
    logging.basicConfig(
        level=numeric,
        format="%(message)s",
        stream=sys.stderr,
    )
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.dev.ConsoleRenderer(),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(numeric),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safl_sim",
        description="Детерминированный симулятор FedAvg / SAFL / Extended SAFL",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="прогнать варианты из файла эксперимента")
    run.add_argument("--config", required=True, help="JSON-файл эксперимента")
    run.add_argument("--out", default=None, help=f"каталог метрик (по умолчанию {settings.out_dir})")
    run.add_argument("--seed-override", type=int, default=None, help="один сид вместо списка seeds")
    run.add_argument("--variants", default=None, help="подмножество вариантов: fedavg,safl")
    run.add_argument("--quiet", action="store_true", help="только предупреждения и ошибки")

    cmp = commands.add_parser("compare", help="сравнить файлы метрик")
    cmp.add_argument("paths", nargs="*", help="CSV-файлы метрик (не меньше двух)")
    cmp.add_argument("--threshold", type=float, default=None, help="порог mse для подсчёта раундов")
    cmp.add_argument("--quiet", action="store_true", help="только предупреждения и ошибки")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging("WARNING" if args.quiet else None)
    logger = structlog.get_logger()

    if args.command == "compare":
        return compare.compare(args.paths, threshold=args.threshold)

    if args.seed_override is not None and args.seed_override < 0:
        logger.error("Negative seed override", seed=args.seed_override)
        return 1
    logger.info("Starting experiment", config=args.config, workers=settings.workers)
    return experiment.run_experiment(
        args.config,
        out_dir=args.out,
        seed_override=args.seed_override,
        variants=parse_variants(args.variants),
    )


if __name__ == "__main__":
    sys.exit(main())
