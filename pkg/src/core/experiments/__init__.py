from . import (
    commands,
    drivers,
    runner,
)
from .commands import COMMANDS, CommandResult, run_command
from .runner import ExperimentRunner

__all__ = [
    "commands",
    "drivers",
    "runner",
    "COMMANDS",
    "CommandResult",
    "ExperimentRunner",
    "run_command",
]
