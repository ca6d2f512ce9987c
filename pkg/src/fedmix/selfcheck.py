"""Invariant self-test suite behind ``fedmix check``.

Each check prints one PASS/FAIL line; the suite passes only if every check
does. These are the fast, deterministic core invariants: analytic gradients
against central finite differences, mixer monotonicity, aggregation algebra,
orthogonal-initialization residuals and clipping idempotence.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .factorization import (
    AgentNetwork,
    MixerNetwork,
    TDBatch,
    build_mixer,
    monotonicity_probe,
    td_loss,
)
from .federation import aggregation_weights, aggregate, apply_global
from .nn_core import (
    LayerSpec,
    ParameterSet,
    clip_global_norm,
    global_norm,
    init_params,
    orthogonal_init,
    value_and_grads,
)

FD_STEP = 1e-5
FD_TOLERANCE = 1e-4
FD_FLOOR = 1e-8


def small_arch(obs_dim: int = 3, hidden: int = 4, n_actions: int = 2) -> list[LayerSpec]:
    return [
        LayerSpec(0, "dense", obs_dim, hidden, "relu"),
        LayerSpec(1, "recurrent", hidden, hidden),
        LayerSpec(2, "dense", hidden, n_actions, "linear"),
    ]


def random_td_setup(rng: np.random.Generator, n_agents: int = 2,
                    obs_dim: int = 3, n_actions: int = 2, state_dim: int = 3,
                    hidden: int = 4, mix_hidden: int = 2, batch: int = 3,
                    steps: int = 3, with_mixer: bool = True):
    """Random small nets plus a random padded episode batch and targets."""
    arch = small_arch(obs_dim, hidden, n_actions)
    nets = [AgentNetwork(tuple(arch), init_params(arch, rng))
            for _ in range(n_agents)]
    mixer = build_mixer(n_agents, state_dim, rng, hidden_dim=mix_hidden) \
        if with_mixer else None

    obs = rng.standard_normal((steps + 1, n_agents, batch, obs_dim))
    avail = np.ones((steps + 1, n_agents, batch, n_actions))
    onehot = np.zeros((steps, n_agents, batch, n_actions))
    for t in range(steps):
        for a in range(n_agents):
            for b in range(batch):
                onehot[t, a, b, rng.integers(n_actions)] = 1.0
    team = rng.standard_normal((steps, batch))
    done = np.zeros((steps, batch))
    done[-1] = 1.0
    mask = np.ones((steps, batch))
    mask[-1, -1] = 0.0  # one ragged episode exercises padding
    state = rng.standard_normal((steps + 1, batch, state_dim))
    tdb = TDBatch(obs=obs, avail=avail, actions_onehot=onehot, team_reward=team,
                  done=done, mask=mask, state=state)
    targets = rng.standard_normal((steps, batch))
    return tdb, nets, mixer, targets


def _loss_groups(tdb: TDBatch, nets, mixer, targets):
    groups = {f"agent_{i}": net.params for i, net in enumerate(nets)}
    if mixer is not None:
        groups["mixer"] = mixer.params

    def loss_fn(views):
        view_nets = [AgentNetwork(net.arch, views[f"agent_{i}"])
                     for i, net in enumerate(nets)]
        return td_loss(tdb, view_nets, mixer, targets,
                       mixer_params=views.get("mixer"))

    def loss_at(values: dict[str, ParameterSet]) -> float:
        value_nets = [AgentNetwork(net.arch, values[f"agent_{i}"])
                      for i, net in enumerate(nets)]
        return td_loss(tdb, value_nets, mixer, targets,
                       mixer_params=values.get("mixer"))

    return groups, loss_fn, loss_at


def max_fd_relative_error(tdb: TDBatch, nets, mixer, targets,
                          h: float = FD_STEP) -> float:
    """Worst relative error of analytic vs central-difference gradients."""
    groups, loss_fn, loss_at = _loss_groups(tdb, nets, mixer, targets)
    _, grads = value_and_grads(loss_fn, groups)
    worst = 0.0
    for group_name, params in groups.items():
        for layer_id, name, tensor in params.items():
            tensor = np.asarray(tensor)
            for index in np.ndindex(tensor.shape):
                original = tensor[index]
                tensor[index] = original + h
                up = loss_at(groups)
                tensor[index] = original - h
                down = loss_at(groups)
                tensor[index] = original
                numeric = (up - down) / (2.0 * h)
                analytic = grads[group_name][layer_id, name][index]
                denom = max(abs(numeric), abs(analytic), FD_FLOOR)
                worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def gradient_check(seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    tdb, nets, mixer, targets = random_td_setup(rng)
    return max_fd_relative_error(tdb, nets, mixer, targets) < FD_TOLERANCE


def monotonicity_check(seed: int = 1, n_samples: int = 1000) -> bool:
    rng = np.random.default_rng(seed)
    mixer = build_mixer(n_agents=3, state_dim=4, rng=rng, hidden_dim=8)
    return monotonicity_probe(mixer, n_samples, rng) >= -1e-9


def aggregation_check(seed: int = 2, n_vectors: int = 200) -> bool:
    rng = np.random.default_rng(seed)
    for _ in range(n_vectors):
        n = int(rng.integers(1, 8))
        rewards = rng.standard_normal(n) * 10.0
        for mode in ("none", "apps", "rspps", "pppps"):
            w = aggregation_weights(mode, rewards)
            if w.min() < 0.0 or abs(w.sum() - 1.0) > 1e-12:
                return False
    equal = aggregation_weights("rspps", [3.5] * 4)
    if np.abs(equal - 0.25).max() > 1e-12:
        return False
    arch = small_arch()
    base = init_params(arch, rng)
    identical = [base.copy() for _ in range(3)]
    fixed = aggregate(identical, aggregation_weights("apps", np.zeros(3)))
    for layer_id, name, tensor in fixed.params.items():
        if np.abs(tensor - base[layer_id, name]).max() > 1e-12:
            return False
    locals_ = [init_params(arch, rng) for _ in range(3)]
    before = [p.copy() for p in locals_]
    personal = aggregate(locals_, aggregation_weights("rspps", [1.0, 2.0, 3.0]),
                         personalized_layers=2)
    blended = [apply_global(p, personal, blend_tau=0.05) for p in locals_]
    for prev, now in zip(before, blended):
        for layer_id in (0, 1):
            for name in prev.tensor_names(layer_id):
                if not np.array_equal(prev[layer_id, name], now[layer_id, name]):
                    return False
    return True


def orthogonality_check(seed: int = 3) -> bool:
    rng = np.random.default_rng(seed)
    for shape in ((1, 1), (4, 4), (8, 3), (3, 8), (64, 64)):
        m = orthogonal_init(shape, rng)
        k = min(shape)
        gram = m @ m.T if shape[0] <= shape[1] else m.T @ m
        if np.abs(gram - np.eye(k)).max() > 1e-10:
            return False
    return True


def clipping_check(seed: int = 4) -> bool:
    rng = np.random.default_rng(seed)
    grads = ParameterSet()
    grads[0, "weight"] = rng.standard_normal((5, 5)) * 10.0
    grads[1, "weight"] = rng.standard_normal(7) * 10.0
    once = clip_global_norm(grads, 1.0)
    twice = clip_global_norm(once, 1.0)
    if abs(global_norm(once) - 1.0) > 1e-12:
        return False
    return all(np.array_equal(a, twice[lid, name]) for lid, name, a in once.items())


CHECKS: tuple[tuple[str, Callable[[], bool]], ...] = (
    ("gradient-vs-finite-differences", gradient_check),
    ("mixer-monotonicity", monotonicity_check),
    ("aggregation-algebra", aggregation_check),
    ("orthogonal-initialization", orthogonality_check),
    ("grad-clip-idempotence", clipping_check),
)


def run_all_checks() -> bool:
    all_ok = True
    for name, check in CHECKS:
        ok = check()
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return all_ok
