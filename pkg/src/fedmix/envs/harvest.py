"""Grid harvest with typed item stations.

Each agent has its own item type. Moving onto one of its uncollected stations
yields that agent +1; stations of any other type are impassable, and they stay
impassable after their owner collects them (the station persists, only its
payload is consumed). Agents never block each other and may share a cell, so
the team optimum decomposes exactly into independent per-agent optima, which
are computed by dynamic programming over (cell, collected-set, steps-left).

Layouts are generated from the reset seed: starts are sampled, then each
agent's stations are chained so every next station lies within the previous
one's viewing radius. A layout is admitted only if every chain hop is
detour-free (walking distance around other types' stations equals Manhattan
distance) and the per-agent optimum provably equals the agent's item count
within the episode limit. Detour-free hops keep a station visible while it is
approached, so the skill the agents must learn is the same everywhere on the
grid and across agents. The asymmetric configuration gives agents unequal
item counts, so their reward streams genuinely differ.

Observations: two 5x5 egocentric planes (own uncollected stations; impassable
cells, counting walls) plus the agent's type one-hot. Global state: normalized
agent coordinates plus one collected flag per station.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import CoopEnv, EnvSpec, StepResult

ACTIONS = ("up", "down", "left", "right", "stay")
_MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0), (0, 0))
VIEW_RADIUS = 2
_GEN_ATTEMPTS = 500


@dataclass(frozen=True)
class _Layout:
    starts: tuple[tuple[int, int], ...]
    stations: tuple[tuple[tuple[int, int], ...], ...]  # per agent
    solo_optima: tuple[int, ...]


class HeterogeneousHarvest(CoopEnv):
    def __init__(self, n_agents: int = 4, width: int = 6, height: int = 6,
                 item_counts: tuple[int, ...] = (2, 2, 2, 2),
                 episode_limit: int = 30):
        if n_agents < 1:
            raise ValueError("need at least one agent")
        if width < 2 or height < 2:
            raise ValueError("grid must be at least 2x2")
        if len(item_counts) != n_agents:
            raise ValueError("one item count per agent required")
        if any(c < 0 for c in item_counts):
            raise ValueError("item counts must be non-negative")
        if n_agents + sum(item_counts) > width * height:
            raise ValueError("grid too small for agents plus items")
        self.n_agents = n_agents
        self.width = width
        self.height = height
        self.item_counts = tuple(int(c) for c in item_counts)
        self.episode_limit = episode_limit
        self._layout_cache: dict[int, _Layout] = {}
        self._layout: _Layout | None = None
        self._positions: list[tuple[int, int]] = []
        self._collected: list[list[bool]] = []
        self._t = 0
        self._done = True

    # -- geometry helpers ---------------------------------------------------

    def _in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def _blocked_for(self, agent_id: int, cell: tuple[int, int]) -> bool:
        layout = self._layout
        for other in range(self.n_agents):
            if other != agent_id and cell in layout.stations[other]:
                return True
        return False

    # -- layout generation ----------------------------------------------------

    def _generate_layout(self, seed: int) -> _Layout:
        rng = np.random.default_rng(seed)
        cells = [(x, y) for y in range(self.height) for x in range(self.width)]
        for _ in range(_GEN_ATTEMPTS):
            order = rng.permutation(len(cells))
            starts = tuple(cells[i] for i in order[:self.n_agents])
            occupied = set(starts)
            stations: list[tuple[tuple[int, int], ...]] = []
            ok = True
            for agent in range(self.n_agents):
                chain: list[tuple[int, int]] = []
                prev = starts[agent]
                for _ in range(self.item_counts[agent]):
                    candidates = [
                        (x, y)
                        for x in range(max(0, prev[0] - VIEW_RADIUS),
                                       min(self.width, prev[0] + VIEW_RADIUS + 1))
                        for y in range(max(0, prev[1] - VIEW_RADIUS),
                                       min(self.height, prev[1] + VIEW_RADIUS + 1))
                        if (x, y) not in occupied
                    ]
                    if not candidates:
                        ok = False
                        break
                    prev = candidates[int(rng.integers(len(candidates)))]
                    chain.append(prev)
                    occupied.add(prev)
                if not ok:
                    break
                stations.append(tuple(chain))
            if not ok:
                continue
            layout = _Layout(starts=starts, stations=tuple(stations),
                             solo_optima=())
            if not all(self._chain_is_detour_free(layout, a)
                       for a in range(self.n_agents)):
                continue
            optima = tuple(self._solo_optimum(layout, a) for a in range(self.n_agents))
            if all(optima[a] == self.item_counts[a] for a in range(self.n_agents)):
                return _Layout(starts=starts, stations=tuple(stations),
                               solo_optima=optima)
        raise RuntimeError(
            f"could not generate a solvable layout for seed {seed}; "
            "the grid/item configuration is too tight")

    def _chain_is_detour_free(self, layout: _Layout, agent_id: int) -> bool:
        """Every hop start->station_1->...->station_k walks its Manhattan
        distance exactly, with other types' stations as walls."""
        walls = {cell for other in range(self.n_agents) if other != agent_id
                 for cell in layout.stations[other]}
        prev = layout.starts[agent_id]
        for target in layout.stations[agent_id]:
            if self._bfs_distance(prev, target, walls) != \
                    abs(prev[0] - target[0]) + abs(prev[1] - target[1]):
                return False
            prev = target
        return True

    def _bfs_distance(self, source: tuple[int, int], target: tuple[int, int],
                      walls: set) -> int:
        if source == target:
            return 0
        frontier = [source]
        seen = {source}
        dist = 0
        while frontier:
            dist += 1
            nxt = []
            for x, y in frontier:
                for dx, dy in _MOVES[:4]:
                    cell = (x + dx, y + dy)
                    if cell == target:
                        return dist
                    if (cell not in seen and self._in_bounds(*cell)
                            and cell not in walls):
                        seen.add(cell)
                        nxt.append(cell)
            frontier = nxt
        return -1  # unreachable

    def _solo_optimum(self, layout: _Layout, agent_id: int) -> int:
        """Max items this agent can collect alone within the episode limit."""
        items = layout.stations[agent_id]
        k = len(items)
        if k == 0:
            return 0
        item_index = {cell: i for i, cell in enumerate(items)}
        walls = {cell for other in range(self.n_agents) if other != agent_id
                 for cell in layout.stations[other]}
        cells = [(x, y) for y in range(self.height) for x in range(self.width)
                 if (x, y) not in walls]
        cell_id = {c: i for i, c in enumerate(cells)}
        n_cells, n_masks = len(cells), 1 << k
        value = np.zeros((n_cells, n_masks), dtype=np.int64)
        for _ in range(self.episode_limit):
            nxt = value.copy()  # "stay" is always a legal move
            for ci, (x, y) in enumerate(cells):
                for dx, dy in _MOVES[:4]:
                    tx, ty = x + dx, y + dy
                    if not self._in_bounds(tx, ty) or (tx, ty) in walls:
                        continue
                    ti = cell_id[(tx, ty)]
                    j = item_index.get((tx, ty))
                    for mask in range(n_masks):
                        if j is not None and not mask & (1 << j):
                            cand = 1 + value[ti, mask | (1 << j)]
                        else:
                            cand = value[ti, mask]
                        if cand > nxt[ci, mask]:
                            nxt[ci, mask] = cand
            value = nxt
        return int(value[cell_id[layout.starts[agent_id]], 0])

    # -- environment interface ------------------------------------------------

    def env_spec(self) -> EnvSpec:
        side = 2 * VIEW_RADIUS + 1
        return EnvSpec(
            n_agents=self.n_agents,
            obs_dim=2 * side * side + self.n_agents,
            state_dim=2 * self.n_agents + sum(self.item_counts),
            n_actions=len(ACTIONS),
            episode_limit=self.episode_limit,
        )

    def reset(self, seed: int = 0) -> StepResult:
        seed = int(seed)
        if seed not in self._layout_cache:
            self._layout_cache[seed] = self._generate_layout(seed)
        self._layout = self._layout_cache[seed]
        self._positions = list(self._layout.starts)
        self._collected = [[False] * self.item_counts[a] for a in range(self.n_agents)]
        self._t = 0
        self._done = False
        return StepResult(observations=self._observations(),
                          rewards=np.zeros(self.n_agents), team_reward=0.0,
                          state=self._state(), done=False,
                          avail_actions=[self._mask(a) for a in range(self.n_agents)])

    def _mask(self, agent_id: int) -> np.ndarray:
        mask = np.zeros(len(ACTIONS), dtype=bool)
        x, y = self._positions[agent_id]
        for action, (dx, dy) in enumerate(_MOVES):
            tx, ty = x + dx, y + dy
            if self._in_bounds(tx, ty) and not self._blocked_for(agent_id, (tx, ty)):
                mask[action] = True
        return mask

    def available_actions(self, agent_id: int) -> np.ndarray:
        if not 0 <= agent_id < self.n_agents:
            raise ValueError(f"invalid agent id {agent_id}")
        if self._done:
            raise RuntimeError("episode is done")
        return self._mask(agent_id)

    def _observations(self) -> list[np.ndarray]:
        side = 2 * VIEW_RADIUS + 1
        obs = []
        for agent in range(self.n_agents):
            x, y = self._positions[agent]
            own = np.zeros((side, side))
            blocked = np.zeros((side, side))
            own_items = self._layout.stations[agent]
            for wy in range(side):
                for wx in range(side):
                    cx, cy = x + wx - VIEW_RADIUS, y + wy - VIEW_RADIUS
                    if not self._in_bounds(cx, cy):
                        blocked[wy, wx] = 1.0
                        continue
                    if self._blocked_for(agent, (cx, cy)):
                        blocked[wy, wx] = 1.0
                    elif (cx, cy) in own_items:
                        j = own_items.index((cx, cy))
                        if not self._collected[agent][j]:
                            own[wy, wx] = 1.0
            type_onehot = np.zeros(self.n_agents)
            type_onehot[agent] = 1.0
            obs.append(np.concatenate([own.ravel(), blocked.ravel(), type_onehot]))
        return obs

    def _state(self) -> np.ndarray:
        coords = []
        for x, y in self._positions:
            coords.extend((x / (self.width - 1), y / (self.height - 1)))
        flags = [1.0 if collected else 0.0
                 for per_agent in self._collected for collected in per_agent]
        return np.array(coords + flags)

    def step(self, joint_action) -> StepResult:
        if self._done:
            raise RuntimeError("step after episode end")
        actions = [int(a) for a in joint_action]
        if len(actions) != self.n_agents:
            raise ValueError("one action per agent required")
        rewards = np.zeros(self.n_agents)
        for agent, action in enumerate(actions):
            if not 0 <= action < len(ACTIONS):
                raise ValueError(f"agent {agent}: action {action} out of range")
            if not self._mask(agent)[action]:
                raise ValueError(f"agent {agent}: action {ACTIONS[action]} unavailable")
        for agent, action in enumerate(actions):
            dx, dy = _MOVES[action]
            x, y = self._positions[agent]
            target = (x + dx, y + dy)
            self._positions[agent] = target
            stations = self._layout.stations[agent]
            if target in stations:
                j = stations.index(target)
                if not self._collected[agent][j]:
                    self._collected[agent][j] = True
                    rewards[agent] += 1.0
        self._t += 1
        all_collected = sum(self.item_counts) > 0 and \
            all(all(per_agent) for per_agent in self._collected)
        self._done = all_collected or self._t >= self.episode_limit
        return StepResult(observations=self._observations(), rewards=rewards,
                          team_reward=float(rewards.sum()), state=self._state(),
                          done=self._done,
                          avail_actions=[self._mask(a) for a in range(self.n_agents)])

    def clone(self) -> "HeterogeneousHarvest":
        other = HeterogeneousHarvest(self.n_agents, self.width, self.height,
                                     self.item_counts, self.episode_limit)
        other._layout_cache = self._layout_cache
        other._layout = self._layout
        other._positions = list(self._positions)
        other._collected = [list(per_agent) for per_agent in self._collected]
        other._t = self._t
        other._done = self._done
        return other

    def optimal_return(self, seed: int = 0) -> float:
        """Exact team optimum: the sum of independent per-agent optima."""
        seed = int(seed)
        if seed not in self._layout_cache:
            self._layout_cache[seed] = self._generate_layout(seed)
        return float(sum(self._layout_cache[seed].solo_optima))
