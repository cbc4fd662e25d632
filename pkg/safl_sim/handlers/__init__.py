"""Команды командной строки."""

from safl_sim.handlers import compare
from safl_sim.handlers import experiment

__all__ = [
    "compare",
    "experiment",
]
