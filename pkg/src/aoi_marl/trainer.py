"""Centralized training with decentralized greedy evaluation.

Episodes are collected with epsilon-greedy exploration; every transition
stores the recurrent hidden states that were live when it was taken, so
single transitions can be replayed without backpropagating through time.
TD targets come from frozen copies of the policy and mixer that are
re-synced every fixed number of gradient steps. Evaluation runs the
policy greedily and never touches the mixer.
"""

from __future__ import annotations

import collections
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import env
from .encoder import EncoderConfig, PolicyNetwork, select_actions
from .errors import ContractViolation
from .mixer import MixerConfig, MixerNetwork
from .nn import Adam, Tensor, backward, mean, no_grad, take_per_row


@dataclass
class Transition:
    obs: env.ObservationSet
    hidden: np.ndarray  # (M, h) recurrent state fed alongside obs
    prev_action: np.ndarray  # (M,) directions taken the slot before (-1 at start)
    action: np.ndarray  # (M,) direction indices
    reward: float
    obs_next: env.ObservationSet
    hidden_next: np.ndarray
    state: np.ndarray  # global state vector at k
    state_next: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Ring buffer of transitions; eviction is oldest-first."""

    def __init__(self, capacity: int = 5000):
        self.capacity = capacity
        self._items: collections.deque = collections.deque(maxlen=capacity)

    def push(self, transition: Transition) -> None:
        self._items.append(transition)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if batch_size > len(self._items):
            raise ContractViolation("not enough transitions to sample a batch")
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in idx]

    def __len__(self):
        return len(self._items)


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 128
    discount: float = 0.99
    epsilon: float = 0.05
    epsilon_start: float = 1.0
    epsilon_anneal_episodes: int = 300
    target_sync_period: int = 200
    buffer_capacity: int = 5000
    total_episodes: int = 600
    warmup_episodes: int = 10
    gradient_steps_per_episode: int = 1
    grad_clip_norm: float = 10.0
    random_layout_fraction: float = 0.25
    eval_interval: int = 50
    checkpoint_interval: int = 200

    def __post_init__(self):
        if not 0.0 < self.discount <= 1.0:
            raise ContractViolation("discount must lie in (0, 1]")
        if self.batch_size > self.buffer_capacity:
            raise ContractViolation("batch_size must not exceed buffer_capacity")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ContractViolation("epsilon must lie in [0, 1]")
        if not self.epsilon <= self.epsilon_start <= 1.0:
            raise ContractViolation("epsilon_start must lie in [epsilon, 1]")

    def epsilon_at(self, episode: int) -> float:
        """Linear anneal from epsilon_start down to the final epsilon.

        Exploration at the final rate alone cannot escape the all-miss
        regime here: a transmission range is several slots of travel wide,
        and the chance of that many consecutive random deviations is
        negligible, so the buffer never contains counterfactual coverage
        events. The anneal ends at the stated exploration rate.
        """
        if self.epsilon_anneal_episodes <= 0 or episode >= self.epsilon_anneal_episodes:
            return self.epsilon
        span = self.epsilon_start - self.epsilon
        return self.epsilon_start - span * episode / self.epsilon_anneal_episodes


@dataclass
class TargetNetworks:
    """Frozen copies used for TD targets; they never receive gradients."""

    policy: PolicyNetwork
    mixer: MixerNetwork


def takeoff_actions(num_uavs: int) -> np.ndarray:
    """Evenly spread slot-0 headings, one per UAV.

    All UAVs launch from the same point with zeroed hidden state, so a
    shared-parameter policy gives them identical Q rows there; pure argmax
    would lock them into a single joint trajectory for the whole episode,
    which caps coverage at what one UAV could do. One slot of deterministic
    dispersion seeds lasting differentiation (their observations differ
    from slot 1 on) and is applied identically during collection and
    greedy evaluation.
    """
    return np.array(
        [(i * env.NUM_DIRECTIONS) // num_uavs for i in range(num_uavs)], dtype=np.int64
    )


def build_networks(world_config: env.WorldConfig, encoder_config: EncoderConfig,
                   mixer_config: MixerConfig, seed) -> tuple[PolicyNetwork, MixerNetwork]:
    rng = np.random.default_rng(seed)
    policy = PolicyNetwork(
        world_config.num_uavs, world_config.num_users, world_config.horizon,
        encoder_config, rng, coord_scale=1.0 / world_config.detection_range,
    )
    mixer = MixerNetwork(
        world_config.num_uavs, env.state_width(world_config), mixer_config, rng
    )
    return policy, mixer


def sync_targets(policy: PolicyNetwork, mixer: MixerNetwork,
                 targets: TargetNetworks) -> None:
    """Exact parameter copy from the live networks into the frozen ones."""
    for live, frozen in ((policy, targets.policy), (mixer, targets.mixer)):
        by_id = {p.id: p for p in frozen.parameters()}
        for p in live.parameters():
            by_id[p.id].data[...] = p.data


def collect_episode(config: env.WorldConfig, policy: PolicyNetwork, epsilon: float,
                    rng: np.random.Generator, layout_seed: Optional[int] = None):
    """Roll one full episode, returning (transitions, return, mean AoI)."""
    state = env.reset(config, seed=layout_seed)
    hidden = policy.zero_hidden()
    prev_action = np.full(config.num_uavs, -1, dtype=np.int64)
    obs = env.build_observations(state, config)
    state_vec = env.global_state_vector(state, config)
    transitions: list[Transition] = []
    episode_return = 0.0
    with no_grad():
        for slot in range(config.horizon):
            q, new_hidden = policy.q_matrix(obs, hidden[0], prev_action)
            if slot == 0:
                action = takeoff_actions(config.num_uavs)
            else:
                action = select_actions(q, epsilon, rng)
            next_state, reward, done = env.step(state, action, config)
            next_obs = env.build_observations(next_state, config)
            next_vec = env.global_state_vector(next_state, config)
            transitions.append(
                Transition(
                    obs=obs,
                    hidden=hidden[0],
                    prev_action=prev_action,
                    action=action,
                    reward=reward,
                    obs_next=next_obs,
                    hidden_next=new_hidden,
                    state=state_vec,
                    state_next=next_vec,
                    terminal=done,
                )
            )
            episode_return += reward
            state, obs, state_vec = next_state, next_obs, next_vec
            hidden = new_hidden[None]
            prev_action = action
    mean_aoi = -episode_return / (config.horizon * config.num_users)
    return transitions, episode_return, mean_aoi


def td_targets(batch: Sequence[Transition], targets: TargetNetworks,
               discount: float) -> np.ndarray:
    """y = r + discount * max-mixed target value; y = r at the horizon."""
    if not batch:
        raise ContractViolation("td_targets needs a non-empty batch")
    m = targets.policy.num_uavs
    with no_grad():
        obs_next = [t.obs_next for t in batch]
        hidden_next = np.stack([t.hidden_next for t in batch])
        # the action taken at k is the successor observation's previous action
        q_next, _ = targets.policy.q_values(
            obs_next, hidden_next, np.stack([t.action for t in batch])
        )
        max_q = q_next.data.max(axis=1).reshape(len(batch), m)
        states_next = np.stack([t.state_next for t in batch])
        mixed = targets.mixer.mix(Tensor(max_q), Tensor(states_next)).data[:, 0]
    rewards = np.array([t.reward for t in batch])
    terminal = np.array([t.terminal for t in batch])
    return np.where(terminal, rewards, rewards + discount * mixed)[:, None]


def td_loss(q_tot: Tensor, targets: np.ndarray) -> Tensor:
    """Mean squared error between mixed values and fixed targets."""
    diff = q_tot - Tensor(targets)
    return mean(diff * diff)


def train_step(buffer: ReplayBuffer, policy: PolicyNetwork, mixer: MixerNetwork,
               targets: TargetNetworks, optimizer: Adam, config: TrainConfig,
               rng: np.random.Generator) -> Optional[float]:
    """One Adam update over policy + mixer; None while the buffer is short."""
    if len(buffer) < config.batch_size:
        return None
    batch = buffer.sample(config.batch_size, rng)
    y = td_targets(batch, targets, config.discount)

    observations = [t.obs for t in batch]
    hidden = np.stack([t.hidden for t in batch])
    q_live, _ = policy.q_values(
        observations, hidden, np.stack([t.prev_action for t in batch])
    )
    actions = np.concatenate([t.action for t in batch])
    chosen = take_per_row(q_live, actions).reshape((len(batch), policy.num_uavs))
    states = np.stack([t.state for t in batch])
    q_tot = mixer.mix(chosen, Tensor(states))

    loss = td_loss(q_tot, y)
    optimizer.zero_grad()
    backward(loss)
    if config.grad_clip_norm > 0:
        clip_gradients(optimizer.params, config.grad_clip_norm)
    optimizer.step()
    return float(loss.data)


def clip_gradients(params, max_norm: float) -> float:
    """Rescale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        total += float(np.sum(p.grad * p.grad))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= scale
    return norm


@dataclass
class EvalResult:
    mean_aoi: float
    mean_return: float
    per_episode: list[dict] = field(default_factory=list)
    trajectories: list[list[dict]] = field(default_factory=list)


def greedy_rollout(config: env.WorldConfig, policy: PolicyNetwork,
                   layout_seed: Optional[int] = None):
    """One greedy episode; returns (return, mean AoI, trajectory rows)."""
    state = env.reset(config, seed=layout_seed)
    hidden = policy.zero_hidden()
    prev_action = np.full(config.num_uavs, -1, dtype=np.int64)
    rows: list[dict] = []
    episode_return = 0.0
    rng = np.random.default_rng(0)  # unused draws: epsilon is 0
    with no_grad():
        for slot in range(config.horizon):
            obs = env.build_observations(state, config)
            q, new_hidden = policy.q_matrix(obs, hidden[0], prev_action)
            if slot == 0:
                action = takeoff_actions(config.num_uavs)
            else:
                action = select_actions(q, 0.0, rng)
            pre_step = state
            state, reward, _ = env.step(state, action, config)
            rows.extend(env.trajectory_rows(slot, pre_step, state.aoi))
            episode_return += reward
            hidden = new_hidden[None]
            prev_action = action
    mean_aoi = -episode_return / (config.horizon * config.num_users)
    return episode_return, mean_aoi, rows


def evaluate_policy(config: env.WorldConfig, policy: PolicyNetwork,
                    episodes: int = 1, seeds: Optional[Sequence[int]] = None) -> EvalResult:
    """Greedy evaluation; decentralized on purpose: no mixer anywhere."""
    if seeds is None:
        seeds = [config.user_placement_seed]
    per_episode = []
    trajectories = []
    for e in range(episodes):
        seed = seeds[e % len(seeds)]
        episode_return, mean_aoi, rows = greedy_rollout(config, policy, layout_seed=seed)
        per_episode.append(
            {"episode": e, "seed": seed, "return": episode_return, "mean_aoi": mean_aoi}
        )
        trajectories.append(rows)
    return EvalResult(
        mean_aoi=float(np.mean([r["mean_aoi"] for r in per_episode])),
        mean_return=float(np.mean([r["return"] for r in per_episode])),
        per_episode=per_episode,
        trajectories=trajectories,
    )


def evaluate_random_policy(config: env.WorldConfig, episodes: int = 1,
                           seeds: Optional[Sequence[int]] = None,
                           action_seed: int = 0) -> EvalResult:
    """Uniform-random-walk baseline over the same scenario layouts."""
    if seeds is None:
        seeds = [config.user_placement_seed]
    rng = np.random.default_rng(action_seed)
    per_episode = []
    for e in range(episodes):
        state = env.reset(config, seed=seeds[e % len(seeds)])
        episode_return = 0.0
        for _ in range(config.horizon):
            action = rng.integers(0, env.NUM_DIRECTIONS, size=config.num_uavs)
            state, reward, _ = env.step(state, action, config)
            episode_return += reward
        per_episode.append(
            {
                "episode": e,
                "seed": seeds[e % len(seeds)],
                "return": episode_return,
                "mean_aoi": -episode_return / (config.horizon * config.num_users),
            }
        )
    return EvalResult(
        mean_aoi=float(np.mean([r["mean_aoi"] for r in per_episode])),
        mean_return=float(np.mean([r["return"] for r in per_episode])),
        per_episode=per_episode,
    )


@dataclass
class TrainResult:
    policy: PolicyNetwork
    mixer: MixerNetwork
    metrics: list[dict]
    eval_trace: list[dict]
    gradient_steps: int
    sync_count: int
    best_mean_aoi: float = float("inf")
    best_params: Optional[dict] = None

    def restore_best(self) -> None:
        """Load the best-evaluated parameters back into the live networks."""
        if self.best_params is None:
            return
        for p in self.policy.parameters() + self.mixer.parameters():
            p.data[...] = self.best_params[p.id]


def run_training(world_config: env.WorldConfig, encoder_config: EncoderConfig,
                 mixer_config: MixerConfig, train_config: TrainConfig,
                 master_seed: int, checkpoint_hook=None) -> TrainResult:
    """Full training loop; bit-reproducible for a fixed master seed."""
    seed_seq = np.random.SeedSequence(master_seed)
    init_seed, explore_seed, sample_seed = seed_seq.spawn(3)
    policy, mixer = build_networks(world_config, encoder_config, mixer_config, init_seed)
    target_policy, target_mixer = build_networks(
        world_config, encoder_config, mixer_config, init_seed
    )
    targets = TargetNetworks(target_policy, target_mixer)
    sync_targets(policy, mixer, targets)

    optimizer = Adam(
        policy.parameters() + mixer.parameters(),
        learning_rate=train_config.learning_rate,
    )
    buffer = ReplayBuffer(train_config.buffer_capacity)
    explore_rng = np.random.default_rng(explore_seed)
    sample_rng = np.random.default_rng(sample_seed)

    metrics: list[dict] = []
    eval_trace: list[dict] = []
    gradient_steps = 0
    sync_count = 0
    best_mean_aoi = float("inf")
    best_params = None
    for episode in range(train_config.total_episodes):
        started = time.perf_counter()
        epsilon = train_config.epsilon_at(episode)
        # a slice of fresh random layouts keeps the replay distribution
        # broad (a fixed layout plus near-greedy exploration collapses the
        # buffer onto a handful of trajectories); the remaining episodes
        # train on the scenario's own layout, which evaluation uses
        layout_seed = None
        if explore_rng.random() < train_config.random_layout_fraction:
            layout_seed = int(explore_rng.integers(1 << 31))
        transitions, episode_return, mean_aoi = collect_episode(
            world_config, policy, epsilon, explore_rng, layout_seed=layout_seed
        )
        for t in transitions:
            buffer.push(t)

        losses = []
        if episode + 1 > train_config.warmup_episodes:
            for _ in range(train_config.gradient_steps_per_episode):
                loss = train_step(
                    buffer, policy, mixer, targets, optimizer, train_config, sample_rng
                )
                if loss is None:
                    break
                losses.append(loss)
                gradient_steps += 1
                if gradient_steps % train_config.target_sync_period == 0:
                    sync_targets(policy, mixer, targets)
                    sync_count += 1

        metrics.append(
            {
                "episode": episode,
                "steps": len(transitions),
                "return": episode_return,
                "mean_aoi": mean_aoi,
                "loss_avg": float(np.mean(losses)) if losses else None,
                "epsilon": epsilon,
                "wall_ms": (time.perf_counter() - started) * 1000.0,
            }
        )

        if (episode + 1) % train_config.eval_interval == 0:
            greedy = evaluate_policy(world_config, policy)
            eval_trace.append(
                {
                    "episode": episode,
                    "mean_aoi": greedy.mean_aoi,
                    "return": greedy.mean_return,
                }
            )
            if greedy.mean_aoi < best_mean_aoi:
                best_mean_aoi = greedy.mean_aoi
                best_params = {
                    p.id: p.data.copy()
                    for p in policy.parameters() + mixer.parameters()
                }
        if checkpoint_hook and (episode + 1) % train_config.checkpoint_interval == 0:
            checkpoint_hook(episode, policy, mixer)

    return TrainResult(policy, mixer, metrics, eval_trace, gradient_steps, sync_count,
                       best_mean_aoi, best_params)
