"""Shared environment data model.

Both environments are cooperative, fully deterministic given the reset seed,
and expose per-agent rewards whose sum is the team reward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int
    obs_dim: int
    state_dim: int
    n_actions: int
    episode_limit: int

    def __post_init__(self):
        for name in ("n_agents", "obs_dim", "state_dim", "n_actions", "episode_limit"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class StepResult:
    """One transition: per-agent views plus the global summary."""

    observations: list[np.ndarray]
    rewards: np.ndarray        # per agent
    team_reward: float         # always the sum of per-agent rewards
    state: np.ndarray
    done: bool
    avail_actions: list[np.ndarray]  # boolean masks, one per agent


class CoopEnv:
    """Interface both environments implement."""

    def env_spec(self) -> EnvSpec:
        raise NotImplementedError

    def reset(self, seed: int = 0) -> StepResult:
        raise NotImplementedError

    def step(self, joint_action) -> StepResult:
        raise NotImplementedError

    def available_actions(self, agent_id: int) -> np.ndarray:
        raise NotImplementedError

    def clone(self) -> "CoopEnv":
        """Snapshot copy for tree search; must not share mutable state."""
        raise NotImplementedError

    def optimal_return(self, seed: int = 0) -> float:
        """Exact maximum undiscounted team return from the seeded start."""
        from .oracle import oracle_optimal_return
        return oracle_optimal_return(self, seed)
