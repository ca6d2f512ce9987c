"""Small exactly-solvable cooperative environments and the optimality oracle."""

from .base import CoopEnv, EnvSpec, StepResult
from .harvest import HeterogeneousHarvest
from .oracle import oracle_optimal_plan, oracle_optimal_return
from .two_step import TwoStepCoordination

ENV_NAMES = ("two_step", "harvest", "harvest_asym")

HARVEST_ITEM_COUNTS = (2, 2, 2, 2)
HARVEST_ASYM_ITEM_COUNTS = (3, 2, 1, 1)


def make_env(name: str) -> CoopEnv:
    """Environment registry used by the trainer and the CLI."""
    if name == "two_step":
        return TwoStepCoordination()
    if name == "harvest":
        return HeterogeneousHarvest(item_counts=HARVEST_ITEM_COUNTS)
    if name == "harvest_asym":
        return HeterogeneousHarvest(item_counts=HARVEST_ASYM_ITEM_COUNTS)
    raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}")


__all__ = [
    "CoopEnv", "EnvSpec", "StepResult",
    "TwoStepCoordination", "HeterogeneousHarvest",
    "oracle_optimal_return", "oracle_optimal_plan",
    "make_env", "ENV_NAMES",
    "HARVEST_ITEM_COUNTS", "HARVEST_ASYM_ITEM_COUNTS",
]
