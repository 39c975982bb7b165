"""Clipped-surrogate PPO (actor-critic style) with truncated GAE.

Environments follow a minimal protocol: ``reset() -> obs`` and
``step(action) -> (obs, reward, done, info)``.  Rollouts span episode
boundaries; environments are reset in place and the done flags cut the
advantage recursion.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .policy_net import (MlpParams, NetConfig, accumulate_gradient, entropy, forward,
                         gaussian_log_prob, init_params, log_prob, squash, squash_correction)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when a minibatch loss or gradient is not finite."""


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.8
    lam: float = 0.92
    clip: float = 0.2
    horizon: int = 512
    minibatch: int = 64
    epochs: int = 10
    actors: int = 4
    c1: float = 0.5
    c2: float = 0.01
    lr: float = 0.01
    iterations: int = 200
    max_grad_norm: float = 0.5
    optimizer: str = "sgd"
    adv_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 <= self.lam <= 1 and 0 < self.clip < 1):
            raise ValueError("need 0 < gamma <= 1, 0 <= lam <= 1, 0 < clip < 1")
        if min(self.horizon, self.minibatch, self.epochs, self.actors) < 1:
            raise ValueError("horizon, minibatch, epochs and actors must be positive")
        if self.minibatch > self.horizon * self.actors:
            raise ValueError("minibatch larger than the collected batch")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    raw_actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_value: float = 0.0
    advantages: np.ndarray | None = None
    value_targets: np.ndarray | None = None

    def __len__(self):
        return self.rewards.shape[0]


@dataclass
class TrainStats:
    iteration: int
    env_steps: int
    episodes: int
    mean_reward_norm: float
    policy_loss: float
    value_loss: float
    entropy: float
    total_loss: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class TrainResult:
    params: MlpParams
    stats: list[TrainStats] = field(default_factory=list)
    episode_returns: list[float] = field(default_factory=list)


# --- advantages ---------------------------------------------------------------


def gae(rewards, values, dones, last_value, gamma, lam):
    """Backward GAE recursion; returns ``(advantages, value_targets)``.

    ``dones[t]`` masks the bootstrap ``V(s_{t+1})`` and stops the recursion
    from leaking across an episode boundary.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("empty rollout")
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    next_values = np.append(values[1:], last_value)
    deltas = rewards + gamma * next_values * not_done - values
    adv = np.empty_like(deltas)
    running = 0.0
    for t in range(deltas.size - 1, -1, -1):
        running = deltas[t] + gamma * lam * not_done[t] * running
        adv[t] = running
    return adv, adv + values


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float):
    adv, targets = gae(buffer.rewards, buffer.values, buffer.dones, buffer.last_value, gamma, lam)
    buffer.advantages, buffer.value_targets = adv, targets
    return adv, targets


def standardize(adv, eps: float = 1e-8) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / np.sqrt(adv.var() + eps)


# --- loss ----------------------------------------------------------------------


def probability_ratio(log_prob_new, log_prob_old):
    return np.exp(np.asarray(log_prob_new) - np.asarray(log_prob_old))


def clipped_policy_loss(ratios, advantages, clip: float) -> float:
    """Clipped surrogate objective (to be maximised)."""
    ratios = np.asarray(ratios, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    return float(np.mean(np.minimum(ratios * advantages,
                                    np.clip(ratios, 1 - clip, 1 + clip) * advantages)))


@dataclass
class LossTerms:
    total: float
    clip_objective: float
    value_loss: float
    entropy: float


def total_loss(params: MlpParams, batch: dict, config: PpoConfig, with_grad: bool = True):
    """Minimised scalar ``-(L_clip - c1 * L_vf + c2 * S)`` and optionally its gradient.

    ``batch`` holds ``obs``, ``raw_actions``, ``log_probs`` (behaviour policy),
    ``advantages`` (already standardised) and ``value_targets``.
    """
    obs, raw = batch["obs"], batch["raw_actions"]
    adv, targets = batch["advantages"], batch["value_targets"]
    n = obs.shape[0]
    out = forward(params, obs)
    lp = log_prob(out, raw)
    ratio = probability_ratio(lp, batch["log_probs"])
    clipped = np.clip(ratio, 1 - config.clip, 1 + config.clip)
    surr = ratio * adv
    surr_c = clipped * adv
    l_clip = float(np.mean(np.minimum(surr, surr_c)))
    v_err = out.value - targets
    l_vf = float(np.mean(v_err**2))
    ent = entropy(out)
    terms = LossTerms(-(l_clip - config.c1 * l_vf + config.c2 * ent), l_clip, l_vf, ent)
    if not with_grad:
        return terms, None
    # the unclipped branch is active whenever it attains the min
    active = surr <= surr_c
    d_ratio = np.where(active, adv, 0.0) / n
    d_lp = d_ratio * ratio
    inv_var = np.exp(-2.0 * params.log_std)
    diff = raw - out.mean
    d_mean = -(d_lp[:, None] * diff * inv_var)
    d_log_std = -(d_lp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) - config.c2
    d_value = config.c1 * 2.0 * v_err / n
    grad = accumulate_gradient(params, out, d_mean, d_value, d_log_std)
    return terms, grad


# --- optimisation --------------------------------------------------------------


class _Optimizer:
    def __init__(self, config: PpoConfig, size: int):
        self.config = config
        self.t = 0
        if config.optimizer == "adam":
            self.m = np.zeros(size)
            self.v = np.zeros(size)

    def step(self, theta: np.ndarray, g: np.ndarray) -> np.ndarray:
        cfg = self.config
        if cfg.optimizer == "sgd":
            return theta - cfg.lr * g
        b1, b2 = 0.9, 0.999
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * g
        self.v = b2 * self.v + (1 - b2) * g * g
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        return theta - cfg.lr * m_hat / (np.sqrt(v_hat) + 1e-8)


def clip_grad_norm(g: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.sqrt(g @ g))
    if max_norm > 0 and norm > max_norm:
        return g * (max_norm / norm)
    return g


def merge_buffers(buffers: list[RolloutBuffer], config: PpoConfig) -> dict:
    for b in buffers:
        if b.advantages is None:
            compute_gae(b, config.gamma, config.lam)
    data = {
        "obs": np.concatenate([b.obs for b in buffers]),
        "raw_actions": np.concatenate([b.raw_actions for b in buffers]),
        "log_probs": np.concatenate([b.log_probs for b in buffers]),
        "advantages": np.concatenate([b.advantages for b in buffers]),
        "value_targets": np.concatenate([b.value_targets for b in buffers]),
    }
    data["advantages"] = standardize(data["advantages"], config.adv_eps)
    return data


def update(params: MlpParams, buffers: list[RolloutBuffer], config: PpoConfig,
           rng: np.random.Generator, optimizer: _Optimizer | None = None):
    """Several epochs of shuffled minibatch descent on the merged buffers.

    Returns ``(new_params, stats)`` with ``stats`` the minibatch-averaged
    loss components.
    """
    data = merge_buffers(buffers, config)
    n = data["obs"].shape[0]
    theta = params.flatten()
    if optimizer is None:
        optimizer = _Optimizer(config, theta.size)
    current = params.copy()
    sums = np.zeros(4)
    count = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            idx = order[start:start + config.minibatch]
            batch = {k: v[idx] for k, v in data.items()}
            terms, grad = total_loss(current, batch, config)
            g = grad.flatten()
            if not (math.isfinite(terms.total) and np.all(np.isfinite(g))):
                raise TrainingDiverged(
                    f"non-finite loss {terms.total} (clip={terms.clip_objective}, "
                    f"vf={terms.value_loss}, entropy={terms.entropy})")
            theta = optimizer.step(theta, clip_grad_norm(g, config.max_grad_norm))
            current = current.load_flat(theta)
            current.clamp_log_std()
            theta = current.flatten()
            sums += (-terms.clip_objective, terms.value_loss, terms.entropy, terms.total)
            count += 1
    means = sums / count
    return current, dict(zip(("policy_loss", "value_loss", "entropy", "total_loss"), means))


# --- rollouts and training -------------------------------------------------------


class _Worker:
    def __init__(self, env, rng):
        self.env = env
        self.rng = rng
        self.obs = np.asarray(env.reset(), dtype=np.float64)
        self.episode_return = 0.0


def collect(params: MlpParams, net_config: NetConfig, workers: list[_Worker], horizon: int):
    """Run ``horizon`` steps in every worker with a frozen parameter snapshot.

    Returns the per-worker buffers and the returns of episodes that finished,
    ordered by (step, worker).
    """
    m = len(workers)
    obs_dim = workers[0].obs.shape[0]
    a_dim = net_config.action_dim
    obs = np.zeros((m, horizon, obs_dim))
    raw = np.zeros((m, horizon, a_dim))
    lps = np.zeros((m, horizon))
    rews = np.zeros((m, horizon))
    vals = np.zeros((m, horizon))
    dones = np.zeros((m, horizon), dtype=bool)
    finished = []
    for t in range(horizon):
        batch_obs = np.stack([w.obs for w in workers])
        out = forward(params, batch_obs)
        noise = np.stack([w.rng.standard_normal(a_dim) for w in workers])
        u = out.mean + out.std * noise
        lp = gaussian_log_prob(u, out.mean, np.log(out.std)) - squash_correction(u)
        actions = squash(u, net_config)
        obs[:, t] = batch_obs
        raw[:, t] = u
        lps[:, t] = lp
        vals[:, t] = out.value
        for i, w in enumerate(workers):
            o, r, d, _ = w.env.step(actions[i])
            rews[i, t] = r
            dones[i, t] = d
            w.episode_return += r
            if d:
                finished.append(w.episode_return)
                w.episode_return = 0.0
                o = w.env.reset()
            w.obs = np.asarray(o, dtype=np.float64)
    last = forward(params, np.stack([w.obs for w in workers])).value
    buffers = [RolloutBuffer(obs[i], raw[i], lps[i], rews[i], vals[i], dones[i],
                             float(last[i])) for i in range(m)]
    return buffers, finished


def train(env_factory: Callable[[int], object], net_config: NetConfig, config: PpoConfig,
          params: MlpParams | None = None, on_iteration=None) -> TrainResult:
    """Collect with the old policy, compute GAE, update; repeat ``iterations`` times.

    ``env_factory(i)`` builds the environment owned by actor ``i`` (seed it
    from the master seed and ``i`` for reproducible streams).
    """
    if params is None:
        params = init_params(net_config, config.seed)
    result = TrainResult(params.copy())
    if config.iterations <= 0:
        return result
    workers = [_Worker(env_factory(i), np.random.default_rng([config.seed, i, 1]))
               for i in range(config.actors)]
    update_rng = np.random.default_rng([config.seed, 2])
    optimizer = _Optimizer(config, params.flatten().size)
    env_steps = 0
    last_mean = 0.0
    current = params.copy()
    for it in range(config.iterations):
        buffers, finished = collect(current, net_config, workers, config.horizon)
        env_steps += config.horizon * config.actors
        current, losses = update(current, buffers, config, update_rng, optimizer)
        result.episode_returns += finished
        if finished:
            last_mean = float(np.mean(finished))
        row = TrainStats(it, env_steps, len(result.episode_returns), last_mean, **losses)
        result.stats.append(row)
        log.info("iter %d  reward %.3f  loss %.4f  entropy %.3f", it, last_mean,
                 row.total_loss, row.entropy)
        if on_iteration is not None:
            on_iteration(row, current)
    result.params = current
    return result
