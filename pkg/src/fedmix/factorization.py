"""Value-factorization heads, TD targets/loss, and action selection.

Two team-value heads are provided: an additive one (vdn) and a monotone
state-conditioned mixing network (qmix). The mixer is a hypernetwork: four
dense heads map the global state to the mixing weights and biases, and the
mixing weights pass through an elementwise absolute value, which makes
dQ_total/dQ_i >= 0 by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn_core import autodiff as ad
from .nn_core import (
    LayerSpec,
    ParameterSet,
    network_step,
    orthogonal_init,
    zero_hidden,
)

EPSILON_MAX = 1.0
EPSILON_MIN = 0.05
EPSILON_DECAY_STEPS = 50_000

MIX_HIDDEN_DIM = 64

# Hypernetwork layer ids inside the mixer ParameterSet.
_HYPER_W1 = 0       # state -> n_agents * hidden  (taken through |.|)
_HYPER_B1 = 1       # state -> hidden
_HYPER_W2 = 2       # state -> hidden             (taken through |.|)
_HYPER_B2_HID = 3   # state -> state (relu)
_HYPER_B2_OUT = 4   # state -> 1


@dataclass
class AgentNetwork:
    """An architecture plus one concrete ParameterSet (arrays or node view)."""

    arch: tuple[LayerSpec, ...]
    params: ParameterSet


@dataclass
class MixerNetwork:
    """State-conditioned monotone mixing head for per-agent Q values."""

    n_agents: int
    state_dim: int
    hidden_dim: int
    params: ParameterSet


def mixer_arch(n_agents: int, state_dim: int, hidden_dim: int = MIX_HIDDEN_DIM
               ) -> list[LayerSpec]:
    return [
        LayerSpec(_HYPER_W1, "dense", state_dim, n_agents * hidden_dim),
        LayerSpec(_HYPER_B1, "dense", state_dim, hidden_dim),
        LayerSpec(_HYPER_W2, "dense", state_dim, hidden_dim),
        LayerSpec(_HYPER_B2_HID, "dense", state_dim, state_dim, "relu"),
        LayerSpec(_HYPER_B2_OUT, "dense", state_dim, 1),
    ]


def build_mixer(n_agents: int, state_dim: int, rng: np.random.Generator,
                hidden_dim: int = MIX_HIDDEN_DIM) -> MixerNetwork:
    specs = mixer_arch(n_agents, state_dim, hidden_dim)
    params = ParameterSet()
    for spec in specs:
        params[spec.layer_id, "weight"] = orthogonal_init((spec.out_dim, spec.in_dim), rng)
        params[spec.layer_id, "bias"] = np.zeros(spec.out_dim)
    return MixerNetwork(n_agents=n_agents, state_dim=state_dim,
                        hidden_dim=hidden_dim, params=params)


def _hyper(params: ParameterSet, layer_id: int, state):
    return ad.linear(state, params[layer_id, "weight"], params[layer_id, "bias"])


def mix_batch(q, state, mixer: MixerNetwork, params: ParameterSet | None = None):
    """Team value for a batch: q (B, n_agents), state (B, state_dim) -> (B,)."""
    p = mixer.params if params is None else params
    n, h = mixer.n_agents, mixer.hidden_dim
    batch = ad.value_of(q).shape[0]
    w1 = ad.absval(_hyper(p, _HYPER_W1, state))          # (B, n*h)
    b1 = _hyper(p, _HYPER_B1, state)                     # (B, h)
    w2 = ad.absval(_hyper(p, _HYPER_W2, state))          # (B, h)
    b2 = _hyper(p, _HYPER_B2_OUT, ad.relu(_hyper(p, _HYPER_B2_HID, state)))  # (B, 1)
    w1 = ad.reshape(w1, (batch, n, h))
    qcol = ad.reshape(q, (batch, n, 1))
    hidden = ad.elu(ad.add(ad.sum_axis(ad.mul(w1, qcol), 1), b1))    # (B, h)
    out = ad.add(ad.sum_axis(ad.mul(w2, hidden), 1), ad.reshape(b2, (batch,)))
    return out


def qmix_total(q_chosen, state, mixer: MixerNetwork) -> float:
    """Team value of one joint step: monotone non-decreasing in every q_i."""
    q = np.asarray(q_chosen, dtype=np.float64)
    s = np.asarray(state, dtype=np.float64)
    if q.shape != (mixer.n_agents,):
        raise ValueError(f"expected {mixer.n_agents} per-agent values, got shape {q.shape}")
    if s.shape != (mixer.state_dim,):
        raise ValueError(f"expected state of length {mixer.state_dim}, got shape {s.shape}")
    return float(mix_batch(q[None, :], s[None, :], mixer)[0])


def vdn_total(q_chosen) -> float:
    """Additive team value: the sum of per-agent chosen-action values."""
    q = np.asarray(q_chosen, dtype=np.float64)
    if q.size == 0:
        raise ValueError("vdn_total needs at least one agent value")
    return float(q.sum())


def greedy_action(q, avail) -> int:
    """Argmax over available actions; ties break to the lowest index."""
    q = np.asarray(q, dtype=np.float64)
    mask = np.asarray(avail, dtype=bool)
    if q.shape != mask.shape:
        raise ValueError("q and availability mask sizes differ")
    if not mask.any():
        raise ValueError("no available action")
    return int(np.argmax(np.where(mask, q, -np.inf)))


def epsilon_greedy(q, avail, epsilon: float, rng: np.random.Generator) -> int:
    """With probability epsilon a uniform available action, else greedy."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        choices = np.flatnonzero(np.asarray(avail, dtype=bool))
        if choices.size == 0:
            raise ValueError("no available action")
        return int(choices[rng.integers(choices.size)])
    return greedy_action(q, avail)


def epsilon_schedule(env_step: int, eps_max: float = EPSILON_MAX,
                     eps_min: float = EPSILON_MIN,
                     decay_steps: int = EPSILON_DECAY_STEPS) -> float:
    """Linear decay from eps_max at step 0 to eps_min at decay_steps."""
    if env_step < 0:
        raise ValueError("env_step must be non-negative")
    if env_step >= decay_steps:
        return eps_min
    return eps_max - (eps_max - eps_min) * env_step / decay_steps


def monotonicity_probe(mixer: MixerNetwork, n_samples: int,
                       rng: np.random.Generator) -> float:
    """Min of Q_total(q + delta*e_i) - Q_total(q) over random perturbations."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    worst = np.inf
    for _ in range(n_samples):
        state = rng.standard_normal(mixer.state_dim)
        q = rng.standard_normal(mixer.n_agents)
        i = int(rng.integers(mixer.n_agents))
        delta = float(rng.uniform(0.01, 1.0))
        bumped = q.copy()
        bumped[i] += delta
        diff = qmix_total(bumped, state, mixer) - qmix_total(q, state, mixer)
        worst = min(worst, diff)
    return float(worst)


@dataclass
class TDBatch:
    """Padded episode batch, time-major.

    obs:            (T+1, n_agents, B, obs_dim)   includes the final observation
    avail:          (T+1, n_agents, B, n_actions) padded with all-available
    actions_onehot: (T,   n_agents, B, n_actions)
    team_reward:    (T, B)
    done:           (T, B) float 0/1
    mask:           (T, B) 1.0 where the step is real, 0.0 on padding
    state:          (T+1, B, state_dim)
    """

    obs: np.ndarray
    avail: np.ndarray
    actions_onehot: np.ndarray
    team_reward: np.ndarray
    done: np.ndarray
    mask: np.ndarray
    state: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.team_reward.shape[0]

    @property
    def n_agents(self) -> int:
        return self.obs.shape[1]

    @property
    def batch_size(self) -> int:
        return self.team_reward.shape[1]


def _greedy_values(batch: TDBatch, nets: Sequence[AgentNetwork]) -> np.ndarray:
    """Per-agent max available Q at every step: (T+1, n_agents, B)."""
    steps = batch.n_steps + 1
    out = np.zeros((steps, batch.n_agents, batch.batch_size))
    for a, net in enumerate(nets):
        h = zero_hidden(net.arch, like=batch.obs[0, a])
        for t in range(steps):
            q, h = network_step(batch.obs[t, a], net.arch, net.params, h)
            masked = np.where(batch.avail[t, a].astype(bool), q, -np.inf)
            out[t, a] = masked.max(axis=-1)
    return out


def td_targets(batch: TDBatch, target_nets: Sequence[AgentNetwork],
               target_mixer: MixerNetwork | None, gamma: float) -> np.ndarray:
    """Bootstrapped TD targets, (T, B); terminal steps reduce to the reward."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    greedy = _greedy_values(batch, target_nets)
    if target_mixer is None:
        q_next = greedy.sum(axis=1)                     # (T+1, B)
    else:
        q_next = np.zeros((batch.n_steps + 1, batch.batch_size))
        for t in range(batch.n_steps + 1):
            q_next[t] = mix_batch(greedy[t].T, batch.state[t], target_mixer)
    y = batch.team_reward + gamma * (1.0 - batch.done) * q_next[1:]
    if not np.all(np.isfinite(y * batch.mask)):
        raise FloatingPointError("non-finite TD target")
    return y


def td_loss(batch: TDBatch, nets: Sequence[AgentNetwork],
            mixer: MixerNetwork | None, targets: np.ndarray,
            mixer_params: ParameterSet | None = None):
    """Mean squared TD error over real steps; differentiable via node views.

    ``targets`` are constants: no gradient flows through them. Returns a float
    when called on plain parameter arrays and an autodiff Node when any
    ParameterSet is a node view.
    """
    chosen: list[list] = []  # [agent][t] -> (B,)
    for a, net in enumerate(nets):
        h = zero_hidden(net.arch, like=batch.obs[0, a])
        per_step = []
        for t in range(batch.n_steps):
            q, h = network_step(batch.obs[t, a], net.arch, net.params, h)
            per_step.append(ad.sum_axis(ad.mul(q, batch.actions_onehot[t, a]), -1))
        chosen.append(per_step)

    total = None
    for t in range(batch.n_steps):
        q_agents = ad.stack_last([chosen[a][t] for a in range(batch.n_agents)])
        if mixer is None:
            pred = ad.sum_axis(q_agents, -1)
        else:
            pred = mix_batch(q_agents, batch.state[t], mixer, params=mixer_params)
        diff = ad.sub(pred, targets[t])
        sq = ad.mul(ad.mul(diff, diff), batch.mask[t])
        term = ad.sum_all(sq)
        total = term if total is None else ad.add(total, term)

    loss = ad.mul(total, 1.0 / float(batch.mask.sum()))
    if not np.isfinite(float(ad.value_of(loss))):
        raise FloatingPointError("non-finite TD loss")
    return loss if isinstance(loss, ad.Node) else float(ad.value_of(loss))
