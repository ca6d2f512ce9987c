"""End-to-end training: rollouts, episodic replay, per-agent TD optimization,
target maintenance, federation scheduling and periodic greedy evaluation.

Control flow is strictly sequential and fully seeded: one master seed derives
the init / exploration / sampling streams and the environment layout seed in a
fixed order, so two runs with the same config produce byte-identical metrics.
Each agent owns its network and optimizer state; the only cross-agent
parameter flow is the federation barrier. A single central mixer (qmix mode)
is trained by the coordinator and does not federate.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .envs import CoopEnv, make_env
from .factorization import (
    AgentNetwork,
    MixerNetwork,
    TDBatch,
    build_mixer,
    epsilon_schedule,
    greedy_action,
    epsilon_greedy,
    td_loss,
    td_targets,
)
from .federation import (
    AggregationPolicy,
    RewardBuffer,
    RoundRecord,
    aggregate,
    aggregation_weights,
    apply_global,
    should_aggregate,
)
from .nn_core import (
    LayerSpec,
    OptimizerState,
    ParameterSet,
    adam_update,
    clip_global_norm,
    init_optimizer_state,
    init_params,
    network_step,
    save_params,
    value_and_grads,
    zero_hidden,
)

AGENT_HIDDEN_DIM = 64

METRICS_HEADER = ("env_step,train_step,eval_return_mean,eval_success_rate,"
                  "td_loss,epsilon,agg_round,agg_weights")


@dataclass
class TrainConfig:
    """All hyper-parameters; the defaults are the published table values."""

    max_train_steps: int = 1_000_000      # environment steps
    evaluate_freq: int = 5_000
    target_update_freq: int = 200
    base_algorithm: str = "qmix"          # "vdn" | "qmix"
    epsilon_decay_steps: int = 50_000
    epsilon_max: float = 1.0
    epsilon_min: float = 0.05
    buffer_size: int = 5_000
    batch_size: int = 96
    learning_rate: float = 5e-4
    gamma: float = 0.99
    mix_hidden_num: int = 1
    mix_hidden_dim: int = 64
    optimizer: str = "adam"
    grad_clip: bool = True
    grad_clip_norm: float = 10.0
    activation: str = "relu"
    orthogonal_init: bool = True
    lr_decay: bool = False
    blend_tau: float = 0.05               # broadcast soft update
    reward_buffer_size: int = 96
    aggregation_interval: int = 300       # optimization steps between rounds
    personalized_layers: int = 4
    sharing: str = "none"                 # none | apps | rspps | pppps
    env_name: str = "two_step"
    seed: int = 0
    out_dir: str = "runs"
    n_eval_episodes: int = 32


def agent_arch(obs_dim: int, n_actions: int, hidden: int = AGENT_HIDDEN_DIM,
               activation: str = "relu") -> list[LayerSpec]:
    """Default agent network: dense -> gated recurrent -> linear head."""
    return [
        LayerSpec(0, "dense", obs_dim, hidden, activation),
        LayerSpec(1, "recurrent", hidden, hidden),
        LayerSpec(2, "dense", hidden, n_actions, "linear"),
    ]


def effective_personalized_layers(configured: int, n_layers: int) -> int:
    """Clamp the cutoff so at least the output head always aggregates."""
    return configured if configured < n_layers else n_layers - 1


@dataclass
class EpisodeRecord:
    """One full trajectory, terminal observation included."""

    observations: np.ndarray   # (T+1, n_agents, obs_dim)
    avail: np.ndarray          # (T+1, n_agents, n_actions) bool
    states: np.ndarray         # (T+1, state_dim)
    actions: np.ndarray        # (T, n_agents) int
    rewards: np.ndarray        # (T, n_agents)
    team_rewards: np.ndarray   # (T,)
    dones: np.ndarray          # (T,) bool

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def episode_return(self) -> float:
        return float(self.team_rewards.sum())


class ReplayBuffer:
    """FIFO ring of episodes with uniform without-replacement sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._episodes: deque[EpisodeRecord] = deque(maxlen=capacity)

    def add(self, episode: EpisodeRecord) -> None:
        self._episodes.append(episode)

    def __len__(self) -> int:
        return len(self._episodes)

    def sample(self, rng: np.random.Generator, batch_size: int) -> list[EpisodeRecord]:
        if batch_size > len(self._episodes):
            raise ValueError("not enough episodes to sample a batch")
        pool = list(self._episodes)
        idx = rng.choice(len(pool), size=batch_size, replace=False)
        return [pool[i] for i in idx]


@dataclass
class AgentLearner:
    """One agent's networks and optimizer; isolated outside federation."""

    agent_id: int
    arch: tuple[LayerSpec, ...]
    params: ParameterSet
    target_params: ParameterSet
    opt_state: OptimizerState
    reward_buffer: RewardBuffer


@dataclass
class MixerLearner:
    mixer: MixerNetwork
    target_params: ParameterSet
    opt_state: OptimizerState


@dataclass
class SeedStreams:
    """All randomness, derived from the master seed in a fixed order."""

    init: np.random.Generator
    explore: np.random.Generator
    sample: np.random.Generator
    layout_seed: int


def seed_streams(master_seed: int) -> SeedStreams:
    root = np.random.SeedSequence(int(master_seed))
    init_ss, explore_ss, sample_ss, layout_ss = root.spawn(4)
    return SeedStreams(
        init=np.random.default_rng(init_ss),
        explore=np.random.default_rng(explore_ss),
        sample=np.random.default_rng(sample_ss),
        layout_seed=int(layout_ss.generate_state(1)[0]),
    )


def rollout_episode(env: CoopEnv, learners: list[AgentLearner], epsilon: float,
                    rng: np.random.Generator, layout_seed: int) -> EpisodeRecord:
    """Play one episode with the online nets; records rewards per agent."""
    result = env.reset(layout_seed)
    hiddens = [zero_hidden(l.arch) for l in learners]
    obs_hist = [result.observations]
    avail_hist = [result.avail_actions]
    state_hist = [result.state]
    actions, rewards, team_rewards, dones = [], [], [], []
    while not result.done:
        joint = []
        for learner in learners:
            obs = result.observations[learner.agent_id]
            q, hiddens[learner.agent_id] = network_step(
                obs, learner.arch, learner.params, hiddens[learner.agent_id])
            joint.append(epsilon_greedy(
                q, result.avail_actions[learner.agent_id], epsilon, rng))
        result = env.step(joint)
        obs_hist.append(result.observations)
        avail_hist.append(result.avail_actions)
        state_hist.append(result.state)
        actions.append(joint)
        rewards.append(result.rewards)
        team_rewards.append(result.team_reward)
        dones.append(result.done)
        for learner in learners:
            learner.reward_buffer.record(learner.agent_id,
                                         result.rewards[learner.agent_id])
    return EpisodeRecord(
        observations=np.asarray(obs_hist, dtype=np.float64),
        avail=np.asarray(avail_hist, dtype=bool),
        states=np.asarray(state_hist, dtype=np.float64),
        actions=np.asarray(actions, dtype=np.int64),
        rewards=np.asarray(rewards, dtype=np.float64),
        team_rewards=np.asarray(team_rewards, dtype=np.float64),
        dones=np.asarray(dones, dtype=bool),
    )


def build_td_batch(episodes: list[EpisodeRecord], n_actions: int) -> TDBatch:
    """Pad episodes to a common length, time-major; padding is masked out."""
    n = len(episodes)
    n_agents = episodes[0].observations.shape[1]
    obs_dim = episodes[0].observations.shape[2]
    state_dim = episodes[0].states.shape[1]
    t_max = max(ep.length for ep in episodes)

    obs = np.zeros((t_max + 1, n_agents, n, obs_dim))
    avail = np.ones((t_max + 1, n_agents, n, n_actions), dtype=np.float64)
    onehot = np.zeros((t_max, n_agents, n, n_actions))
    team = np.zeros((t_max, n))
    done = np.zeros((t_max, n))
    mask = np.zeros((t_max, n))
    state = np.zeros((t_max + 1, n, state_dim))

    t_idx = np.arange(t_max)[:, None]
    a_idx = np.arange(n_agents)[None, :]
    for b, ep in enumerate(episodes):
        t = ep.length
        obs[:t + 1, :, b, :] = ep.observations
        avail[:t + 1, :, b, :] = ep.avail
        state[:t + 1, b, :] = ep.states
        team[:t, b] = ep.team_rewards
        done[:t, b] = ep.dones.astype(np.float64)
        mask[:t, b] = 1.0
        onehot[t_idx[:t], a_idx, b, ep.actions] = 1.0
    return TDBatch(obs=obs, avail=avail, actions_onehot=onehot, team_reward=team,
                   done=done, mask=mask, state=state)


def train_iteration(learners: list[AgentLearner], mixer: MixerLearner | None,
                    replay: ReplayBuffer, config: TrainConfig,
                    rng: np.random.Generator, n_actions: int) -> float | None:
    """One optimization step on every agent net (and the mixer) from a batch.

    No-op (returns None) while the replay buffer is below one full batch.
    """
    if len(replay) < config.batch_size:
        return None
    episodes = replay.sample(rng, config.batch_size)
    batch = build_td_batch(episodes, n_actions)

    target_nets = [AgentNetwork(l.arch, l.target_params) for l in learners]
    target_mixer = None
    if mixer is not None:
        target_mixer = MixerNetwork(mixer.mixer.n_agents, mixer.mixer.state_dim,
                                    mixer.mixer.hidden_dim, mixer.target_params)
    targets = td_targets(batch, target_nets, target_mixer, config.gamma)

    groups = {f"agent_{l.agent_id}": l.params for l in learners}
    if mixer is not None:
        groups["mixer"] = mixer.mixer.params

    def loss_fn(views):
        nets = [AgentNetwork(l.arch, views[f"agent_{l.agent_id}"]) for l in learners]
        mixer_params = views.get("mixer")
        return td_loss(batch, nets, None if mixer is None else mixer.mixer,
                       targets, mixer_params=mixer_params)

    loss, grads = value_and_grads(loss_fn, groups)

    for learner in learners:
        g = grads[f"agent_{learner.agent_id}"]
        if config.grad_clip:
            g = clip_global_norm(g, config.grad_clip_norm)
        learner.params, learner.opt_state = adam_update(
            learner.params, g, learner.opt_state, config.learning_rate)
    if mixer is not None:
        g = grads["mixer"]
        if config.grad_clip:
            g = clip_global_norm(g, config.grad_clip_norm)
        mixer.mixer.params, mixer.opt_state = adam_update(
            mixer.mixer.params, g, mixer.opt_state, config.learning_rate)
    return loss


def update_targets(learners: list[AgentLearner], mixer: MixerLearner | None,
                   train_step: int, freq: int) -> None:
    """Hard-copy online nets into targets every ``freq`` optimization steps."""
    if train_step % freq != 0:
        return
    for learner in learners:
        learner.target_params = learner.params.copy()
    if mixer is not None:
        mixer.target_params = mixer.mixer.params.copy()


def federation_round(learners: list[AgentLearner], policy: AggregationPolicy,
                     train_step: int, round_index: int) -> RoundRecord | None:
    """One aggregation barrier: weigh, aggregate, blend-broadcast, audit.

    Reward buffers are not cleared; their ring semantics provide the sliding
    window the weights are computed over.
    """
    if policy.mode == "none":
        return None
    reward_sums = learners[0].reward_buffer.sums()
    weights = aggregation_weights(policy.mode, reward_sums, policy.weight_floor)
    cutoff = policy.personalized_layers if policy.mode == "pppps" else 0
    snapshots = [l.params for l in learners]
    global_model = aggregate(snapshots, weights, cutoff)
    global_model.round_index = round_index
    distances = np.array([
        params.l2_distance(global_model.params,
                           layer_ids=set(global_model.aggregated_layer_ids))
        for params in snapshots
    ])
    for learner in learners:
        learner.params = apply_global(learner.params, global_model, policy.blend_tau)
    return RoundRecord(round_index=round_index, train_step=train_step,
                       mode=policy.mode, weights=weights, distances=distances)


def evaluate(env: CoopEnv, learners: list[AgentLearner],
             mixer: MixerLearner | None, n_episodes: int, layout_seed: int,
             optimal_return: float) -> tuple[float, float]:
    """Greedy-policy evaluation; success means hitting the exact optimum.

    Execution is fully decentralized, so the mixer plays no role here; it is
    accepted to mirror the training-side signature.
    """
    returns = []
    successes = 0
    for _ in range(n_episodes):
        result = env.reset(layout_seed)
        hiddens = [zero_hidden(l.arch) for l in learners]
        total = 0.0
        while not result.done:
            joint = []
            for learner in learners:
                q, hiddens[learner.agent_id] = network_step(
                    result.observations[learner.agent_id], learner.arch,
                    learner.params, hiddens[learner.agent_id])
                joint.append(greedy_action(q, result.avail_actions[learner.agent_id]))
            result = env.step(joint)
            total += result.team_reward
        returns.append(total)
        if total >= optimal_return - 1e-9:
            successes += 1
    return float(np.mean(returns)), successes / n_episodes


@dataclass
class EvalRow:
    env_step: int
    train_step: int
    eval_return_mean: float
    eval_success_rate: float
    td_loss: float | None
    epsilon: float
    agg_round: int
    agg_weights: str

    def format_line(self) -> str:
        loss = "" if self.td_loss is None else repr(self.td_loss)
        return (f"{self.env_step},{self.train_step},{repr(self.eval_return_mean)},"
                f"{repr(self.eval_success_rate)},{loss},{repr(self.epsilon)},"
                f"{self.agg_round},{self.agg_weights}")


@dataclass
class RunResult:
    run_dir: Path
    metrics_path: Path
    rows: list[EvalRow]
    final_train_step: int


def config_items(config: TrainConfig) -> list[tuple[str, str]]:
    """(file key, string value) pairs for every config field, in field order."""
    from .cli import KEY_TABLE  # table lives with the parser
    by_field = {entry.field: entry.key for entry in KEY_TABLE}
    out = []
    for f in fields(config):
        value = getattr(config, f.name)
        text = str(value).lower() if isinstance(value, bool) else str(value)
        out.append((by_field[f.name], text))
    return out


def write_manifest(path: Path, config: TrainConfig, layout_seed: int,
                   artifacts: dict[str, str], started: str, ended: str) -> None:
    """Manifest doubles as a config file: metadata in comments, keys verbatim."""
    lines = [
        "# fedmix run manifest",
        f"# version: {__version__}",
        f"# started: {started}",
        f"# ended: {ended}",
        f"# layout_seed: {layout_seed}",
    ]
    lines += [f"# artifact {name}: {value}" for name, value in sorted(artifacts.items())]
    lines += [f"{key}={value}" for key, value in config_items(config)]
    path.write_text("\n".join(lines) + "\n")


def _checkpoint_paths(run_dir: Path, n_agents: int, with_mixer: bool) -> dict[str, Path]:
    paths = {f"agent_{i}": run_dir / f"agent_{i}.params.txt" for i in range(n_agents)}
    if with_mixer:
        paths["mixer"] = run_dir / "mixer.params.txt"
    return paths


def run(config: TrainConfig) -> RunResult:
    """Execute one training run and write all artifacts into the run dir."""
    run_dir = Path(config.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    streams = seed_streams(config.seed)

    env = make_env(config.env_name)
    eval_env = make_env(config.env_name)
    spec = env.env_spec()
    optimal = env.optimal_return(streams.layout_seed)

    arch = tuple(agent_arch(spec.obs_dim, spec.n_actions,
                            activation=config.activation))
    reward_buffer = RewardBuffer(spec.n_agents, config.reward_buffer_size)
    learners = []
    for agent_id in range(spec.n_agents):
        params = init_params(list(arch), streams.init,
                             orthogonal=config.orthogonal_init)
        learners.append(AgentLearner(
            agent_id=agent_id, arch=arch, params=params,
            target_params=params.copy(),
            opt_state=init_optimizer_state(params),
            reward_buffer=reward_buffer))
    mixer = None
    if config.base_algorithm == "qmix":
        net = build_mixer(spec.n_agents, spec.state_dim, streams.init,
                          hidden_dim=config.mix_hidden_dim)
        mixer = MixerLearner(mixer=net, target_params=net.params.copy(),
                             opt_state=init_optimizer_state(net.params))

    policy = AggregationPolicy(
        mode=config.sharing,
        interval=config.aggregation_interval,
        blend_tau=config.blend_tau,
        personalized_layers=effective_personalized_layers(
            config.personalized_layers, len(arch)),
    )

    metrics_path = run_dir / f"metrics_seed{config.seed}.csv"
    audit_path = run_dir / "aggregation_audit.log"
    manifest_path = run_dir / "manifest.txt"
    checkpoints = _checkpoint_paths(run_dir, spec.n_agents, mixer is not None)
    artifacts = {"metrics": metrics_path.name, "audit": audit_path.name}
    artifacts.update({name: path.name for name, path in checkpoints.items()})

    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    write_manifest(manifest_path, config, streams.layout_seed, artifacts,
                   started, "pending")

    def save_checkpoints():
        for learner in learners:
            save_params(checkpoints[f"agent_{learner.agent_id}"], learner.params)
        if mixer is not None:
            save_params(checkpoints["mixer"], mixer.mixer.params)

    replay = ReplayBuffer(config.buffer_size)
    env_step = 0
    train_step = 0
    rounds = 0
    last_loss: float | None = None
    last_weights = ""
    rows: list[EvalRow] = []
    next_eval = config.evaluate_freq

    with open(metrics_path, "w") as metrics, open(audit_path, "w") as audit:
        metrics.write(f"# env={config.env_name} layout_seed={streams.layout_seed}\n")
        metrics.write(METRICS_HEADER + "\n")
        while env_step < config.max_train_steps:
            eps = epsilon_schedule(env_step, config.epsilon_max,
                                   config.epsilon_min, config.epsilon_decay_steps)
            episode = rollout_episode(env, learners, eps, streams.explore,
                                      streams.layout_seed)
            replay.add(episode)
            env_step += episode.length
            loss = train_iteration(learners, mixer, replay, config,
                                   streams.sample, spec.n_actions)
            if loss is not None:
                last_loss = loss
                train_step += 1
                update_targets(learners, mixer, train_step, config.target_update_freq)
                if should_aggregate(train_step, config.aggregation_interval):
                    record = federation_round(learners, policy, train_step,
                                              rounds + 1)
                    if record is not None:
                        rounds += 1
                        last_weights = ";".join(
                            format(w, ".12f") for w in record.weights)
                        audit.write(record.format_line() + "\n")
                        audit.flush()
            if env_step >= next_eval:
                mean_return, success = evaluate(eval_env, learners, mixer,
                                                config.n_eval_episodes,
                                                streams.layout_seed, optimal)
                rows.append(EvalRow(
                    env_step=env_step, train_step=train_step,
                    eval_return_mean=mean_return, eval_success_rate=success,
                    td_loss=last_loss,
                    epsilon=epsilon_schedule(env_step, config.epsilon_max,
                                             config.epsilon_min,
                                             config.epsilon_decay_steps),
                    agg_round=rounds, agg_weights=last_weights))
                metrics.write(rows[-1].format_line() + "\n")
                metrics.flush()
                save_checkpoints()
                next_eval = (env_step // config.evaluate_freq + 1) * config.evaluate_freq
    save_checkpoints()
    ended = time.strftime("%Y-%m-%dT%H:%M:%S")
    write_manifest(manifest_path, config, streams.layout_seed, artifacts,
                   started, ended)
    return RunResult(run_dir=run_dir, metrics_path=metrics_path, rows=rows,
                     final_train_step=train_step)
