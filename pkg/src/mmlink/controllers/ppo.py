"""Deep-RL controller: PPO updates of a shared actor-critic network."""
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from ..env import MmWaveEnv, SlotResult
from ..nn import (
    Architecture, MlpParams, adam_init, adam_step, forward, init_params, load_params,
    masked_entropy, masked_log_softmax, save_params, value_and_grad,
)
from ..pomdp import (
    Action, ObservableState, RewardScaler, decode_action, feasibility_mask,
    observation_vector, reward, scale_observation,
)
from ..scenario import ScenarioConfig
from .base import BaseController

# Floor for log-probabilities of sampled actions
LOG_PROB_FLOOR = -40.0


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.999
    clip: float = 0.2
    entropy_coef: float = 0.05
    batch_size: int = 5
    lr: float = 1e-3
    lr_decay: float = 0.9
    lr_decay_every: int = 20
    critic_bootstrap: str = 'last'    # 'last': v(s[T-1]), 'next': v(s[T])

    def __post_init__(self):
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must be in [0, 1]")
        if self.clip <= 0 or self.batch_size < 1:
            raise ValueError("need clip > 0 and batch_size >= 1")
        if self.critic_bootstrap not in ('last', 'next'):
            raise ValueError(f"unknown critic bootstrap '{self.critic_bootstrap}'")

    @classmethod
    def from_scenario(cls, cfg: ScenarioConfig) -> 'PpoConfig':
        return cls(cfg.ppo_gamma, cfg.ppo_clip, cfg.ppo_entropy, cfg.ppo_batch, cfg.ppo_lr,
                   cfg.ppo_lr_decay, cfg.ppo_lr_decay_every, cfg.ppo_critic_bootstrap)


def architecture_for(cfg: ScenarioConfig) -> Architecture:
    return Architecture(4 * cfg.n_ue, cfg.n_actions, tuple(cfg.ppo_hidden),
                        cfg.ppo_activation, cfg.ppo_shared_trunk)


@dataclass
class RolloutBatch:
    """T transitions collected under the old policy plus v(s[T])."""
    features: np.ndarray
    masks: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    next_value: float = 0.0

    def __len__(self) -> int:
        return len(self.actions)


def act(params: MlpParams, features: np.ndarray, mask: np.ndarray,
        rng: np.random.Generator) -> tuple[int, float, float]:
    """Sample an action from the masked policy; returns (index, log-prob, value)."""
    logits, value = forward(params, features)
    log_probs = masked_log_softmax(logits, mask)
    index = int(rng.choice(len(log_probs), p=np.exp(log_probs)))
    return index, max(float(log_probs[index]), LOG_PROB_FLOOR), value


def compute_gae(batch: RolloutBatch, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Advantages as discounted tail sums of TD errors, and the matching return targets."""
    values = np.append(batch.values, batch.next_value)
    deltas = batch.rewards + gamma * values[1:] - values[:-1]
    advantages = np.zeros(len(batch))
    running = 0.0
    for t in reversed(range(len(batch))):
        running = deltas[t] + gamma * running
        advantages[t] = running
    return advantages, advantages + batch.values


def critic_targets(rewards: np.ndarray, bootstrap: float, gamma: float) -> np.ndarray:
    """sum_l gamma^(l-t) r[l] + gamma^(T-t) * bootstrap for every t."""
    targets = np.zeros(len(rewards))
    running = bootstrap
    for t in reversed(range(len(rewards))):
        running = rewards[t] + gamma * running
        targets[t] = running
    return targets


def clipped_surrogate(ratio, advantages, clip: float) -> np.ndarray:
    ratio = np.asarray(ratio, dtype=float)
    advantages = np.asarray(advantages, dtype=float)
    return np.minimum(ratio * advantages, np.clip(ratio, 1 - clip, 1 + clip) * advantages)


def critic_loss(values: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean((np.asarray(values) - np.asarray(targets)) ** 2))


def _policy_terms(logits: np.ndarray, batch: RolloutBatch):
    log_probs = masked_log_softmax(logits, batch.masks)
    probs = np.exp(log_probs)
    rows = np.arange(len(batch))
    taken = log_probs[rows, batch.actions]
    return log_probs, probs, taken, rows


def actor_loss(params: MlpParams, batch: RolloutBatch, advantages: np.ndarray, cfg: PpoConfig) -> float:
    """-mean clipped surrogate - c_e * mean entropy of the current masked policy."""
    logits, _ = forward(params, batch.features)
    log_probs, probs, taken, _ = _policy_terms(logits, batch)
    ratio = np.exp(np.maximum(taken, LOG_PROB_FLOOR) - batch.log_probs)
    surrogate = clipped_surrogate(ratio, advantages, cfg.clip)
    entropy = masked_entropy(probs, log_probs)
    return float(-surrogate.mean() - cfg.entropy_coef * entropy.mean())


def ppo_loss_fn(batch: RolloutBatch, advantages: np.ndarray, targets: np.ndarray,
                cfg: PpoConfig, info: dict = None):
    """Loss definition for value_and_grad: actor + critic, with analytic output gradients."""
    n = len(batch)

    def loss_fn(logits, values):
        log_probs, probs, taken, rows = _policy_terms(logits, batch)
        clamped = np.maximum(taken, LOG_PROB_FLOOR)
        ratio = np.exp(clamped - batch.log_probs)
        unclipped = ratio * advantages
        clipped = np.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * advantages
        surrogate = np.minimum(unclipped, clipped)
        entropy = masked_entropy(probs, log_probs)
        l_actor = -surrogate.mean() - cfg.entropy_coef * entropy.mean()
        l_critic = critic_loss(values, targets)

        # d surrogate / d log pi(a): ratio * A on the active unclipped branch, else 0
        d_taken = np.where((unclipped <= clipped) & (taken > LOG_PROB_FLOOR), ratio * advantages, 0.0)
        onehot = np.zeros_like(probs)
        onehot[rows, batch.actions] = 1.0
        d_surrogate = d_taken[:, None] * (onehot - probs)
        safe_log = np.where(batch.masks, log_probs, 0.0)
        d_entropy = -probs * (safe_log + entropy[:, None])
        dlogits = (-d_surrogate - cfg.entropy_coef * d_entropy) / n
        dvalues = 2.0 * (values - targets) / n

        if info is not None:
            info.update(actor_loss=float(l_actor), critic_loss=float(l_critic),
                        entropy=float(entropy.mean()))
        return l_actor + l_critic, dlogits, dvalues

    return loss_fn


class PolicyEnv(Protocol):
    """Anything a PPO agent can be trained on."""

    def observe(self) -> tuple[np.ndarray, np.ndarray]:
        """(features, feasibility mask) of the current state."""
        ...

    def step(self, index: int) -> float:
        """Execute an action index and return the scaled reward."""
        ...


@dataclass
class PpoAgent:
    """Policy parameters, optimizer and the rollout buffer of the batch in progress."""
    params: MlpParams
    cfg: PpoConfig
    rng: np.random.Generator
    frozen: bool = False
    updates: int = 0
    _buffer: list = field(default_factory=list, repr=False)
    _pending: tuple = field(default=None, repr=False)

    def __post_init__(self):
        self.opt = adam_init(self.params, self.cfg.lr, self.cfg.lr_decay, self.cfg.lr_decay_every)

    def act(self, features: np.ndarray, mask: np.ndarray) -> int:
        index, log_prob, value = act(self.params, features, mask, self.rng)
        if not self.frozen:
            self._pending = (features, mask, index, log_prob, value)
        return index

    def record(self, r: float, next_features: np.ndarray) -> dict:
        """Store the reward of the last action; run an update once T steps are buffered."""
        if self.frozen or self._pending is None:
            return None
        self._buffer.append(self._pending + (r,))
        self._pending = None
        if len(self._buffer) < self.cfg.batch_size:
            return None
        _, next_value = forward(self.params, next_features)
        batch = self._make_batch(next_value)
        self._buffer.clear()
        return self.update(batch)

    def _make_batch(self, next_value: float) -> RolloutBatch:
        features, masks, actions, log_probs, values, rewards = zip(*self._buffer)
        return RolloutBatch(
            features=np.array(features), masks=np.array(masks), actions=np.array(actions),
            rewards=np.array(rewards, dtype=float), values=np.array(values, dtype=float),
            log_probs=np.array(log_probs, dtype=float), next_value=float(next_value),
        )

    def update(self, batch: RolloutBatch) -> dict:
        """One gradient step on L_actor + L_critic with theta_old log-probs from the batch."""
        advantages, _ = compute_gae(batch, self.cfg.gamma)
        bootstrap = batch.values[-1] if self.cfg.critic_bootstrap == 'last' else batch.next_value
        targets = critic_targets(batch.rewards, bootstrap, self.cfg.gamma)
        info = {}
        loss, grads = value_and_grad(self.params, batch.features,
                                     ppo_loss_fn(batch, advantages, targets, self.cfg, info))
        self.params, self.opt = adam_step(self.params, grads, self.opt)
        self.updates += 1
        info.update(update=self.updates, loss=loss, mean_reward=float(batch.rewards.mean()), lr=self.opt.lr)
        return info


def train(env: PolicyEnv, params: MlpParams, cfg: PpoConfig, rng: np.random.Generator,
          total_steps: int, steps_per_iteration: int = None, progress_callback=None):
    """Collect T steps, update, repeat until total_steps slots are consumed.

    Returns the trained parameters and one log entry per update.
    """
    agent = PpoAgent(params.copy(), cfg, rng)
    log = []
    features, mask = env.observe()
    rewards = []
    for step in range(1, total_steps + 1):
        index = agent.act(features, mask)
        r = env.step(index)
        rewards.append(r)
        features, mask = env.observe()
        info = agent.record(r, features)
        if info is not None:
            if not np.isfinite(info['loss']):
                raise FloatingPointError(f"non-finite loss at update {info['update']}")
            log.append(info)
        if progress_callback and steps_per_iteration and step % steps_per_iteration == 0:
            iteration = step // steps_per_iteration
            total = total_steps // steps_per_iteration
            progress_callback(f"Iteration {iteration}/{total}: mean reward {np.mean(rewards):.4f}")
            rewards = []
    return agent.params, log


class MmWavePolicyEnv:
    """Adapts the simulator to the PolicyEnv protocol with scaled observations and rewards."""

    def __init__(self, env: MmWaveEnv, cfg: ScenarioConfig):
        self.env = env
        self.n_block_tilde = cfg.n_block_tilde
        self.n_codebooks = cfg.n_codebooks
        self.scaler = RewardScaler(cfg.reward_scale_gbps, cfg.slot_duration, cfg.packet_bits)
        self.last_result: SlotResult = None

    def features(self, obs: ObservableState) -> np.ndarray:
        return observation_vector(scale_observation(obs, self.n_block_tilde))

    def observe(self) -> tuple[np.ndarray, np.ndarray]:
        obs = self.env.observe()
        return self.features(obs), feasibility_mask(obs, self.n_codebooks)

    def step(self, index: int) -> float:
        action = decode_action(index, self.env.n_ue, self.n_codebooks)
        self.last_result = self.env.execute_slot(action)
        return reward(self.last_result.delivered, self.scaler)


class PpoController(BaseController):
    name = 'ppo'

    def __init__(self, cfg: ScenarioConfig, rng: np.random.Generator, params: MlpParams = None):
        super().__init__(cfg, rng)
        self.arch = architecture_for(cfg)
        self.scaler = RewardScaler(cfg.reward_scale_gbps, cfg.slot_duration, cfg.packet_bits)
        if params is None:
            params = init_params(self.arch, rng)
        self.agent = PpoAgent(params, PpoConfig.from_scenario(cfg), rng)
        self.last_info: dict = None

    def features(self, obs: ObservableState) -> np.ndarray:
        return observation_vector(scale_observation(obs, self.cfg.n_block_tilde))

    def freeze(self):
        super().freeze()
        self.agent.frozen = True

    def act(self, obs: ObservableState) -> Action:
        index = self.agent.act(self.features(obs), feasibility_mask(obs, self.n_codebooks))
        return decode_action(index, self.n_ue, self.n_codebooks)

    def observe(self, result: SlotResult):
        r = reward(result.delivered, self.scaler)
        info = self.agent.record(r, self.features(result.observation))
        if info is not None:
            self.last_info = info

    def save(self, path):
        save_params(path, self.agent.params)

    def load(self, path):
        self.agent = PpoAgent(load_params(path, self.arch), self.agent.cfg, self.rng, frozen=self.frozen)
