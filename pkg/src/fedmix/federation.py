"""Periodic parameter sharing across agents.

Three strategies share one code path: uniform weighting (apps), weighting by
each agent's recent accumulated reward (rspps), and reward weighting with the
lowest layers held personal (pppps). Aggregation consumes only ParameterSets
and reward scalars; observations, states and actions never cross this
boundary, so raw experience stays with its agent.

The blended broadcast is local' = (1 - tau) * local + tau * global on the
aggregated layers; personalized layers are never touched.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .nn_core import ParameterSet

MODES = ("none", "apps", "rspps", "pppps")

DEFAULT_INTERVAL = 300
DEFAULT_BLEND_TAU = 0.05
DEFAULT_WEIGHT_FLOOR = 1e-6
DEFAULT_CAPACITY = 96


class RewardBuffer:
    """Per-agent ring buffers of the most recent per-agent rewards."""

    def __init__(self, n_agents: int, capacity: int = DEFAULT_CAPACITY):
        if n_agents < 1 or capacity < 1:
            raise ValueError("n_agents and capacity must be positive")
        self.n_agents = n_agents
        self.capacity = capacity
        self._buffers = [deque(maxlen=capacity) for _ in range(n_agents)]

    def record(self, agent_id: int, reward: float) -> None:
        """Append one reward; the oldest entry is evicted at capacity."""
        self._buffers[agent_id].append(float(reward))

    def sum(self, agent_id: int) -> float:
        return float(np.sum(self._buffers[agent_id])) if self._buffers[agent_id] else 0.0

    def sums(self) -> np.ndarray:
        return np.array([self.sum(i) for i in range(self.n_agents)])

    def size(self, agent_id: int) -> int:
        return len(self._buffers[agent_id])

    def contents(self, agent_id: int) -> list[float]:
        return list(self._buffers[agent_id])


def record_reward(buffer: RewardBuffer, agent_id: int, reward: float) -> None:
    buffer.record(agent_id, reward)


@dataclass(frozen=True)
class AggregationPolicy:
    """Strategy selector plus interval, blend factor and layer cutoff."""

    mode: str = "none"
    interval: int = DEFAULT_INTERVAL
    blend_tau: float = DEFAULT_BLEND_TAU
    personalized_layers: int = 0
    weight_floor: float = DEFAULT_WEIGHT_FLOOR

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown sharing mode {self.mode!r}")
        if self.interval < 1:
            raise ValueError("interval must be at least 1")
        if not 0.0 < self.blend_tau <= 1.0:
            raise ValueError("blend_tau must be in (0, 1]")
        if self.personalized_layers < 0:
            raise ValueError("personalized_layers must be non-negative")
        if self.mode == "pppps" and self.personalized_layers < 1:
            raise ValueError("pppps requires at least one personalized layer")
        if self.weight_floor <= 0:
            raise ValueError("weight_floor must be positive")


@dataclass
class GlobalModel:
    """Aggregated parameters (aggregated layers only) and a round counter."""

    params: ParameterSet
    round_index: int = 0
    aggregated_layer_ids: tuple[int, ...] = ()


def aggregation_weights(mode: str, reward_sums, weight_floor: float = DEFAULT_WEIGHT_FLOOR
                        ) -> np.ndarray:
    """Non-negative weights summing to one.

    apps (and none) weight uniformly. rspps and pppps weight each agent by its
    accumulated reward R_i / sum(R): used directly when every R_i is
    non-negative and their sum is positive, which is where that ratio is
    well defined. Degenerate inputs fall back deterministically: all-equal
    sums give exact uniform weights, and any negative entry switches to
    shift-by-minimum plus a small floor before normalizing, which preserves
    the reward ordering.
    """
    if mode not in MODES:
        raise ValueError(f"unknown sharing mode {mode!r}")
    r = np.asarray(reward_sums, dtype=np.float64)
    n = r.size
    if n == 0:
        raise ValueError("need at least one agent")
    if mode in ("apps", "none"):
        return np.full(n, 1.0 / n)
    if np.all(r == r[0]):
        return np.full(n, 1.0 / n)
    if r.min() >= 0.0 and r.sum() > 0.0:
        return r / r.sum()
    shifted = r - r.min() + weight_floor
    return shifted / shifted.sum()


def aggregate(params_list: list[ParameterSet], weights,
              personalized_layers: int = 0) -> GlobalModel:
    """Layer-wise weighted average; layers below the cutoff stay absent."""
    if not params_list:
        raise ValueError("need at least one ParameterSet")
    w = np.asarray(weights, dtype=np.float64)
    if w.size != len(params_list):
        raise ValueError("one weight per agent required")
    reference = params_list[0]
    for i, other in enumerate(params_list[1:], start=1):
        if not reference.same_shapes(other):
            for (lid, name, t), (lid2, name2, t2) in zip(reference.items(), other.items()):
                if (lid, name) != (lid2, name2) or np.asarray(t).shape != np.asarray(t2).shape:
                    raise ValueError(
                        f"agent {i} disagrees at layer {lid}/{name!r} "
                        f"(shape {np.asarray(t2).shape} vs {np.asarray(t).shape})")
            raise ValueError(f"agent {i} has a mismatched parameter structure")

    aggregated = ParameterSet()
    kept: list[int] = []
    for layer_id in reference.layer_ids():
        if layer_id < personalized_layers:
            continue
        kept.append(layer_id)
        for name in reference.tensor_names(layer_id):
            total = np.zeros_like(np.asarray(reference[layer_id, name], dtype=np.float64))
            for weight, params in zip(w, params_list):
                total = total + weight * params[layer_id, name]
            aggregated[layer_id, name] = total
    return GlobalModel(params=aggregated, aggregated_layer_ids=tuple(kept))


def apply_global(local: ParameterSet, global_model: GlobalModel,
                 blend_tau: float) -> ParameterSet:
    """Blend aggregated layers toward the global model; others bit-unchanged."""
    if not 0.0 < blend_tau <= 1.0:
        raise ValueError("blend_tau must be in (0, 1]")
    out = ParameterSet()
    for layer_id, name, tensor in local.items():
        if (layer_id, name) in global_model.params:
            g = global_model.params[layer_id, name]
            if np.asarray(g).shape != np.asarray(tensor).shape:
                raise ValueError(f"layer {layer_id}: global shape mismatch for {name!r}")
            out[layer_id, name] = (1.0 - blend_tau) * tensor + blend_tau * g
        else:
            out[layer_id, name] = np.array(tensor)
    return out


def should_aggregate(train_step: int, interval: int) -> bool:
    """True on every interval-th optimization step, skipping step 0."""
    if train_step < 0:
        raise ValueError("train_step must be non-negative")
    if interval < 1:
        raise ValueError("interval must be at least 1")
    return train_step > 0 and train_step % interval == 0


@dataclass
class RoundRecord:
    """One aggregation round, as written to the audit log."""

    round_index: int
    train_step: int
    mode: str
    weights: np.ndarray
    distances: np.ndarray  # per-agent L2 distance to the global model

    def format_line(self) -> str:
        weights = ";".join(format(w, ".12f") for w in self.weights)
        dists = ";".join(format(d, ".12f") for d in self.distances)
        return (f"round={self.round_index} train_step={self.train_step} "
                f"mode={self.mode} weights={weights} dists={dists}")
