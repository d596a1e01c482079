"""Actor-critic PPO with a clipped surrogate, GAE and epsilon-mixed exploration.

Exploration follows a decaying epsilon: the behavior policy is the mixture
``eps * Uniform(3) + (1 - eps) * softmax(actor(obs))`` and every log-probability
(behavior and re-evaluated) is taken under that mixture, so importance ratios
stay consistent while epsilon is non-zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numba import njit

from . import nn
from .nn import forward_row_kernel
from .data import HourlyRecord
from .env import (N_ACTIONS, OBS_DIM, Action, EnvConfig, EnvState, _soc_bin,
                  _transition, encode_observation)


class NonFiniteLoss(FloatingPointError):
    """Training diverged; carries the diagnostics of the failing update."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EmptyBatch(ValueError):
    pass


@dataclass(frozen=True)
class PpoHyperparams:
    learning_rate: float = 0.003
    discount: float = 0.89
    clip: float = 0.2
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.0001
    minibatch: int = 64
    epochs_per_iteration: int = 4
    gae_lambda: float = 0.95
    value_coeff: float = 0.5
    entropy_coeff: float = 0.01
    rollout_horizon: int = 720
    max_grad_norm: float = 0.5
    actor_hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self) -> None:
        if not 0 < self.discount <= 1:
            raise ValueError("discount must be in (0, 1]")
        if self.clip <= 0:
            raise ValueError("clip must be > 0")
        if not 0 <= self.epsilon_start <= 1 or self.epsilon_decay < 0:
            raise ValueError("epsilon_start must be in [0, 1], epsilon_decay >= 0")
        if not 1 <= self.minibatch <= self.rollout_horizon:
            raise ValueError("minibatch must be in [1, rollout_horizon]")
        if self.epochs_per_iteration < 1 or self.learning_rate <= 0:
            raise ValueError("epochs_per_iteration >= 1 and learning_rate > 0 required")

    def epsilon(self, episode: int) -> float:
        return max(0.0, self.epsilon_start - self.epsilon_decay * episode)


def make_actor(hp: PpoHyperparams, rng: np.random.Generator) -> nn.Mlp:
    return nn.Mlp.initialized((OBS_DIM, *hp.actor_hidden, N_ACTIONS), rng)


def make_critic(hp: PpoHyperparams, rng: np.random.Generator) -> nn.Mlp:
    return nn.Mlp.initialized((OBS_DIM, *hp.critic_hidden, 1), rng)


# ------------------------------------------------------------------- policy


def mixture_probs(logits: np.ndarray, epsilon: float) -> np.ndarray:
    return epsilon / N_ACTIONS + (1.0 - epsilon) * nn.softmax(logits)


def act(actor: nn.Mlp, observation: np.ndarray, epsilon: float,
        rng: np.random.Generator) -> tuple[Action, float]:
    """Sample from the epsilon mixture by inverse CDF of one uniform draw."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon {epsilon} outside [0, 1]")
    logits, _ = nn.forward(actor, observation)
    probs = mixture_probs(logits, epsilon)
    u = rng.random()
    a = _inverse_cdf(probs, u)
    return Action(a), math.log(probs[a])


def greedy_action(actor: nn.Mlp, observation: np.ndarray) -> Action:
    logits, _ = nn.forward(actor, observation)
    # argmax takes the lowest index on ties
    return Action(int(np.argmax(nn.softmax(logits))))


@njit(cache=True)
def _inverse_cdf(probs, u):
    acc = 0.0
    for a in range(probs.shape[0] - 1):
        acc += probs[a]
        if u < acc:
            return a
    return probs.shape[0] - 1


# --------------------------------------------------------------- estimators


def compute_gae(rewards: Sequence[float], values: Sequence[float], dones: Sequence[float],
                discount: float, gae_lambda: float,
                last_value: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and returns (advantage + value).

    ``last_value`` bootstraps the state after the final step when that step is
    not terminal.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    if not r.shape == v.shape == d.shape or r.ndim != 1:
        raise ValueError(f"length mismatch: rewards {r.shape}, values {v.shape}, dones {d.shape}")
    adv = np.empty_like(r)
    running = 0.0
    next_value = last_value
    for t in range(len(r) - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + discount * next_value * live - v[t]
        running = delta + discount * gae_lambda * live * running
        adv[t] = running
        next_value = v[t]
    return adv, adv + v


def clipped_objective(ratio, advantage, clip: float):
    """Per-sample PPO objective ``min(r*A, clip(r, 1-c, 1+c)*A)``."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(advantage, dtype=np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv)


def clipped_surrogate(new_log_prob, old_log_prob, advantage, clip: float):
    """``clipped_objective`` with the ratio formed from log-probabilities."""
    ratio = np.exp(np.asarray(new_log_prob, dtype=np.float64) - old_log_prob)
    return clipped_objective(ratio, advantage, clip)


# ------------------------------------------------------------------ batches


@dataclass(frozen=True)
class Transition:
    observation: np.ndarray
    action: int
    behavior_log_prob: float
    reward: float
    value_estimate: float
    done: bool


@dataclass
class TrajectoryBatch:
    observations: np.ndarray       # (n, obs_dim)
    actions: np.ndarray            # (n,) int
    behavior_log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray         # standardized
    returns: np.ndarray
    epsilon: float = 0.0

    def __len__(self) -> int:
        return len(self.actions)

    def transitions(self) -> list[Transition]:
        return [Transition(self.observations[i], int(self.actions[i]),
                           float(self.behavior_log_probs[i]), float(self.rewards[i]),
                           float(self.values[i]), bool(self.dones[i]))
                for i in range(len(self))]


def standardize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / (x.std() + 1e-8)


def make_batch(observations, actions, behavior_log_probs, rewards, dones,
               critic: nn.Mlp, hp: PpoHyperparams, epsilon: float) -> TrajectoryBatch:
    obs = np.asarray(observations, dtype=np.float64)
    values, _ = nn.forward(critic, obs)
    values = values[:, 0]
    dones = np.asarray(dones, dtype=np.float64)
    adv, ret = compute_gae(rewards, values, dones, hp.discount, hp.gae_lambda)
    return TrajectoryBatch(obs, np.asarray(actions, dtype=np.int64),
                           np.asarray(behavior_log_probs, dtype=np.float64),
                           np.asarray(rewards, dtype=np.float64), values, dones,
                           standardize(adv), ret, epsilon)


# ------------------------------------------------------------------- update


@dataclass
class UpdateStats:
    surrogate: float
    value_loss: float
    clip_fraction: float
    entropy: float
    n_minibatches: int


def _actor_grad(actor: nn.Mlp, obs, actions, old_logp, adv, epsilon, hp: PpoHyperparams):
    """Gradient of -mean(surrogate) - entropy_coeff * mean(entropy) for one minibatch."""
    n = len(actions)
    rows = np.arange(n)
    logits, cache = nn.forward(actor, obs)
    z = logits - logits.max(axis=1, keepdims=True)
    log_pi = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    pi = np.exp(log_pi)
    pi_a = pi[rows, actions]
    p_mix = epsilon / N_ACTIONS + (1.0 - epsilon) * pi_a
    ratio = np.exp(np.log(p_mix) - old_logp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - hp.clip, 1.0 + hp.clip) * adv
    surr = np.minimum(surr1, surr2)
    entropy = -(pi * log_pi).sum(axis=1)

    # no gradient flows through the clipped branch
    g_logp = np.where(surr1 <= surr2, -ratio * adv, 0.0) / n
    coef = g_logp * (1.0 - epsilon) * pi_a / p_mix
    g = pi * ((hp.entropy_coeff / n) * (log_pi + entropy[:, None]) - coef[:, None])
    g[rows, actions] += coef

    grad, _ = nn.backward(actor, cache, g)
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > hp.clip))
    return grad, float(surr.mean()), float(entropy.mean()), clip_frac


def _critic_grad(critic: nn.Mlp, obs, returns, hp: PpoHyperparams):
    v, cache = nn.forward(critic, obs)
    err = v[:, 0] - returns
    grad, _ = nn.backward(critic, cache, (2.0 * hp.value_coeff / len(err)) * err[:, None])
    return grad, float(np.mean(err * err))


def ppo_update(actor: nn.Mlp, critic: nn.Mlp, batch: TrajectoryBatch, hp: PpoHyperparams,
               actor_opt: nn.AdamState, critic_opt: nn.AdamState,
               rng: np.random.Generator) -> UpdateStats:
    """Several epochs of shuffled minibatch Adam steps on both networks.

    Reported losses are averaged over minibatches, each measured before that
    minibatch's step.
    """
    n = len(batch)
    if n == 0:
        raise EmptyBatch("no transitions to learn from")
    sums = np.zeros(4)
    count = 0
    for _ in range(hp.epochs_per_iteration):
        perm = rng.permutation(n)
        for start in range(0, n, hp.minibatch):
            idx = perm[start:start + hp.minibatch]
            obs = batch.observations[idx]
            g_actor, surr, ent, clip_frac = _actor_grad(
                actor, obs, batch.actions[idx], batch.behavior_log_probs[idx],
                batch.advantages[idx], batch.epsilon, hp)
            g_critic, vloss = _critic_grad(critic, obs, batch.returns[idx], hp)
            if not (math.isfinite(surr) and math.isfinite(vloss) and math.isfinite(ent)):
                raise NonFiniteLoss("non-finite PPO loss", {
                    "surrogate": surr, "value_loss": vloss, "entropy": ent,
                    "minibatch": count})
            nn.clip_grad_norm(g_actor, hp.max_grad_norm)
            nn.clip_grad_norm(g_critic, hp.max_grad_norm)
            try:
                nn.adam_step(actor.params, g_actor, actor_opt)
                nn.adam_step(critic.params, g_critic, critic_opt)
            except nn.NonFiniteGradient as exc:
                raise NonFiniteLoss(str(exc), {"minibatch": count}) from exc
            sums += (surr, vloss, clip_frac, ent)
            count += 1
    s = sums / count
    return UpdateStats(float(s[0]), float(s[1]), float(s[2]), float(s[3]), count)


# ------------------------------------------------------------------ rollout


@njit(cache=True)
def _rollout(params, sizes, acts, hours, load, pv, price, soc0, epsilon, uniforms,
             capacity, rate, lo_frac, hi_frac, penalty, n_bins, load_scale, pv_scale):
    n = load.shape[0]
    obs = np.empty((n, 4))
    actions = np.empty(n, dtype=np.int64)
    logp = np.empty(n)
    rewards = np.empty(n)
    grid = np.empty(n)
    soc = soc0
    x = np.empty(4)
    for t in range(n):
        x[0] = hours[t] / 23.0
        x[1] = _soc_bin(soc, capacity, n_bins) / (n_bins - 1)
        x[2] = load[t] / load_scale
        x[3] = pv[t] / pv_scale
        obs[t] = x
        z = forward_row_kernel(params, sizes, acts, x)
        z = np.exp(z - z.max())
        probs = epsilon / 3.0 + (1.0 - epsilon) * (z / z.sum())
        a = _inverse_cdf(probs, uniforms[t])
        actions[t] = a
        logp[t] = math.log(probs[a])
        soc, _, g, pen = _transition(soc, a, load[t], pv[t], capacity, rate, lo_frac, hi_frac)
        grid[t] = g
        rewards[t] = -g * price[t] - (penalty if pen else 0.0)
    return obs, actions, logp, rewards, grid


@dataclass
class Rollout:
    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    grid_import: np.ndarray
    dones: np.ndarray


class WindowArrays:
    """Column arrays of an hourly window, in the layout the kernels consume."""

    def __init__(self, window: Sequence[HourlyRecord]):
        self.hours = np.array([r.index % 24 for r in window], dtype=np.int64)
        self.load = np.array([r.load_kwh for r in window])
        self.pv = np.array([r.pv_kwh for r in window])
        self.price = np.array([r.price for r in window])

    def __len__(self) -> int:
        return len(self.load)


def collect_episode(actor: nn.Mlp, window: WindowArrays, config: EnvConfig,
                    initial_soc_frac: float, epsilon: float,
                    uniforms: np.ndarray) -> Rollout:
    """Roll the epsilon-mixed policy through the whole window.

    ``uniforms[t]`` drives the action draw at step t, exactly as ``act`` would
    use successive ``rng.random()`` values.
    """
    obs, actions, logp, rewards, grid = _rollout(
        actor.params, actor.size_array, actor.act_array, window.hours, window.load, window.pv, window.price,
        initial_soc_frac * config.capacity_kwh, epsilon, uniforms,
        config.capacity_kwh, config.rate_kw, config.soc_min_frac, config.soc_max_frac,
        config.penalty_value, config.soc_bins, config.load_scale_kwh, config.pv_scale_kwh)
    dones = np.zeros(len(actions))
    dones[-1] = 1.0
    return Rollout(obs, actions, logp, rewards, grid, dones)


# -------------------------------------------------------------------- train


@dataclass
class EpisodeLog:
    episode: int
    reward: float
    epsilon: float
    clip_fraction: float


@dataclass
class PpoResult:
    actor: nn.Mlp
    critic: nn.Mlp
    history: list[EpisodeLog] = field(default_factory=list)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([h.reward for h in self.history])


def train(window: Sequence[HourlyRecord], config: EnvConfig, hp: PpoHyperparams,
          total_episodes: int, seed: int, initial_soc_frac: float = 0.5,
          progress: Callable[[EpisodeLog], None] | None = None) -> PpoResult:
    """One seeded PPO run, one episode (a full pass over ``window``) per iteration."""
    if total_episodes < 1:
        raise ValueError("total_episodes must be >= 1")
    init_seq, sample_seq = np.random.SeedSequence(seed).spawn(2)
    init_rng = np.random.default_rng(init_seq)
    rng = np.random.default_rng(sample_seq)
    actor = make_actor(hp, init_rng)
    critic = make_critic(hp, init_rng)
    actor_opt = nn.AdamState.for_params(actor.params, hp.learning_rate)
    critic_opt = nn.AdamState.for_params(critic.params, hp.learning_rate)

    arrays = WindowArrays(window[:hp.rollout_horizon])
    result = PpoResult(actor, critic)
    for episode in range(total_episodes):
        eps = hp.epsilon(episode)
        roll = collect_episode(actor, arrays, config, initial_soc_frac, eps,
                               rng.random(len(arrays)))
        batch = make_batch(roll.observations, roll.actions, roll.log_probs, roll.rewards,
                           roll.dones, critic, hp, eps)
        stats = ppo_update(actor, critic, batch, hp, actor_opt, critic_opt, rng)
        log = EpisodeLog(episode, float(roll.rewards.sum()), eps, stats.clip_fraction)
        result.history.append(log)
        if progress is not None:
            progress(log)
    return result


def greedy_policy(actor: nn.Mlp, config: EnvConfig) -> Callable[[EnvState, HourlyRecord], Action]:
    def policy(state: EnvState, record: HourlyRecord) -> Action:
        return greedy_action(actor, encode_observation(state, config))
    return policy
