"""Two-step coordination game.

Stage 0: agent 0's action selects branch A (action 0) or branch B (action 1);
agent 1's stage-0 action is ignored. Stage 1: branch A pays the team 7 for any
joint action; branch B pays [[0, 1], [1, 8]] indexed by (agent0, agent1).
The optimal return of 8 requires the coordinated risky joint action (1, 1),
which is what makes this a factorization stress test despite its size.

Observations are a one-hot over the three stage/branch situations plus the
agent's identity; the global state is the situation one-hot. Per-agent reward
is half the team reward. Fully deterministic; the reset seed is accepted for
interface uniformity only.
"""

from __future__ import annotations

import numpy as np

from .base import CoopEnv, EnvSpec, StepResult

BRANCH_A_REWARD = 7.0
BRANCH_B_PAYOFF = ((0.0, 1.0), (1.0, 8.0))

_START, _BRANCH_A, _BRANCH_B = 0, 1, 2


class TwoStepCoordination(CoopEnv):
    N_AGENTS = 2
    N_ACTIONS = 2
    EPISODE_LIMIT = 2

    def __init__(self):
        self._situation = _START
        self._t = 0
        self._done = False

    def env_spec(self) -> EnvSpec:
        return EnvSpec(n_agents=self.N_AGENTS, obs_dim=5, state_dim=3,
                       n_actions=self.N_ACTIONS, episode_limit=self.EPISODE_LIMIT)

    def _state(self) -> np.ndarray:
        state = np.zeros(3)
        state[self._situation] = 1.0
        return state

    def _observations(self) -> list[np.ndarray]:
        obs = []
        for agent in range(self.N_AGENTS):
            vec = np.zeros(5)
            vec[self._situation] = 1.0
            vec[3 + agent] = 1.0
            obs.append(vec)
        return obs

    def _masks(self) -> list[np.ndarray]:
        return [np.ones(self.N_ACTIONS, dtype=bool) for _ in range(self.N_AGENTS)]

    def reset(self, seed: int = 0) -> StepResult:
        self._situation = _START
        self._t = 0
        self._done = False
        return StepResult(observations=self._observations(),
                          rewards=np.zeros(self.N_AGENTS), team_reward=0.0,
                          state=self._state(), done=False,
                          avail_actions=self._masks())

    def available_actions(self, agent_id: int) -> np.ndarray:
        if not 0 <= agent_id < self.N_AGENTS:
            raise ValueError(f"invalid agent id {agent_id}")
        if self._done:
            raise RuntimeError("episode is done")
        return np.ones(self.N_ACTIONS, dtype=bool)

    def step(self, joint_action) -> StepResult:
        if self._done:
            raise RuntimeError("step after episode end")
        a0, a1 = (int(a) for a in joint_action)
        if not (0 <= a0 < self.N_ACTIONS and 0 <= a1 < self.N_ACTIONS):
            raise ValueError(f"action out of range: {joint_action}")
        if self._situation == _START:
            self._situation = _BRANCH_A if a0 == 0 else _BRANCH_B
            team = 0.0
            self._done = False
        else:
            team = (BRANCH_A_REWARD if self._situation == _BRANCH_A
                    else BRANCH_B_PAYOFF[a0][a1])
            self._done = True
        self._t += 1
        if self._t >= self.EPISODE_LIMIT:
            self._done = True
        rewards = np.full(self.N_AGENTS, team / self.N_AGENTS)
        return StepResult(observations=self._observations(), rewards=rewards,
                          team_reward=float(team), state=self._state(),
                          done=self._done, avail_actions=self._masks())

    def clone(self) -> "TwoStepCoordination":
        other = TwoStepCoordination()
        other._situation = self._situation
        other._t = self._t
        other._done = self._done
        return other
