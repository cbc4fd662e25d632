"""Ошибки симулятора и коды выхода CLI."""

from enum import IntEnum


class ExitCode(IntEnum):
    OK = 0
    CONFIG = 1
    DIVERGENCE = 2
    IO = 3


class SimulationError(Exception):
    """Базовая ошибка симулятора."""


class ConfigError(SimulationError):
    """Неверный или отсутствующий ключ конфигурации."""

    def __init__(self, key: str, message: str) -> None:
        self.key = key
        super().__init__(f"{key}: {message}")


class DimensionMismatchError(SimulationError, ValueError):
    pass


class EmptyDatasetError(SimulationError, ValueError):
    pass


class UnsupportedOperationError(SimulationError):
    pass


class PreconditionError(SimulationError, ValueError):
    pass


class ConvergenceError(SimulationError):
    pass


class DivergenceError(SimulationError):
    """Параметры стали нечисловыми (inf/nan)."""

    def __init__(self, message: str, round_index: int | None = None) -> None:
        self.round_index = round_index
        if round_index is not None:
            message = f"round {round_index}: {message}"
        super().__init__(message)
