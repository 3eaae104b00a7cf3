from ..grammar import ATOMIC, MacroMode
from .base import Environment, Infeasible, Observation, Transition, Unsolvable
from .chain import ChainEnv, ChainTask
from .rushhour import RushHourEnv, RushTask
from .sudoku import SudokuEnv, SudokuTask


def make_env(task, mode: MacroMode = ATOMIC, dense: bool = False, **options) -> Environment:
    """Fresh single-episode environment for ``task``."""
    if isinstance(task, ChainTask):
        return ChainEnv(task, mode, dense, **options)
    if isinstance(task, SudokuTask):
        return SudokuEnv(task, mode, dense)
    if isinstance(task, RushTask):
        return RushHourEnv(task, mode, dense)
    raise TypeError(f"no environment for {type(task).__name__}")


def env_tag_of(task) -> str:
    if isinstance(task, ChainTask):
        return "chain"
    if isinstance(task, SudokuTask):
        return "sudoku"
    if isinstance(task, RushTask):
        return "rushhour"
    raise TypeError(f"unknown task type {type(task).__name__}")


__all__ = [
    "ChainEnv",
    "ChainTask",
    "Environment",
    "Infeasible",
    "Observation",
    "RushHourEnv",
    "RushTask",
    "SudokuEnv",
    "SudokuTask",
    "Transition",
    "Unsolvable",
    "env_tag_of",
    "make_env",
]
