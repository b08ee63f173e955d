"""E-PoW: proof of work whose hash search commits to useful matrix work."""

from .consensus import BlockHeader, DifficultyState, LSPField, validate_block
from .coordinator import Coordinator
from .matrix import Matrix, multiply, multiply_naive
from .simnet import MetricsReport, ScenarioConfig, Simulation, paper_replica, run
from .tasks import MMCTask, accumulate, divide_into_subtasks, partition

__version__ = "0.1.0"

__all__ = [
    "BlockHeader",
    "Coordinator",
    "DifficultyState",
    "LSPField",
    "MMCTask",
    "Matrix",
    "MetricsReport",
    "ScenarioConfig",
    "Simulation",
    "accumulate",
    "divide_into_subtasks",
    "multiply",
    "multiply_naive",
    "paper_replica",
    "partition",
    "run",
    "validate_block",
]
