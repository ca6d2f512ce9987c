"""Brute-force optimality oracle for tiny environments.

Exhaustively enumerates every joint-action sequence from the seeded start and
returns the exact maximum undiscounted team return. A worst-case bound on the
number of sequences is enforced up front so this is only ever used on
environments small enough to search completely.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from .base import CoopEnv

MAX_SEQUENCES = 10 ** 6


def _sequence_bound(env: CoopEnv) -> int:
    spec = env.env_spec()
    return (spec.n_actions ** spec.n_agents) ** spec.episode_limit


def oracle_optimal_plan(env: CoopEnv, seed: int = 0,
                        max_sequences: int = MAX_SEQUENCES
                        ) -> tuple[float, list[tuple[int, ...]]]:
    """(best return, one argmax joint-action sequence) by exhaustive search."""
    bound = _sequence_bound(env)
    if bound > max_sequences:
        raise ValueError(
            f"search space of {bound} joint-action sequences exceeds the "
            f"{max_sequences} bound")
    root = env.clone()
    first = root.reset(seed)
    best_return = -np.inf
    best_plan: list[tuple[int, ...]] = []

    def search(state: CoopEnv, done: bool, acc: float, plan: list[tuple[int, ...]]):
        nonlocal best_return, best_plan
        if done:
            if acc > best_return:
                best_return = acc
                best_plan = list(plan)
            return
        choices = [np.flatnonzero(state.available_actions(a))
                   for a in range(state.env_spec().n_agents)]
        for joint in product(*choices):
            child = state.clone()
            result = child.step(joint)
            plan.append(tuple(int(a) for a in joint))
            search(child, result.done, acc + result.team_reward, plan)
            plan.pop()

    search(root, first.done, 0.0, [])
    return float(best_return), best_plan


def oracle_optimal_return(env: CoopEnv, seed: int = 0,
                          max_sequences: int = MAX_SEQUENCES) -> float:
    """Exact maximum episode team return, by exhaustive enumeration."""
    value, _ = oracle_optimal_plan(env, seed, max_sequences)
    return value
