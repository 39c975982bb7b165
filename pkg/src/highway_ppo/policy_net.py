"""Shared-trunk actor-critic MLP with a tanh-squashed diagonal Gaussian head.

Forward and reverse passes are written out in numpy (float64) so the
gradient can be checked against finite differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LOG_STD_INIT = -0.7
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class NetConfig:
    input_dim: int = 16
    hidden_layers: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    action_dim: int = 2
    action_low: tuple[float, ...] = (-5.0, -math.pi / 4)
    action_high: tuple[float, ...] = (5.0, math.pi / 4)

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        object.__setattr__(self, "action_low", tuple(float(a) for a in self.action_low))
        object.__setattr__(self, "action_high", tuple(float(a) for a in self.action_high))
        if self.input_dim <= 0 or self.action_dim <= 0 or any(h <= 0 for h in self.hidden_layers):
            raise ValueError("all layer sizes must be positive")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if len(self.action_low) != self.action_dim or len(self.action_high) != self.action_dim:
            raise ValueError("action bounds must have action_dim entries")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_layers]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def trunk_dim(self) -> int:
        return self.hidden_layers[-1] if self.hidden_layers else self.input_dim

    @property
    def n_params(self) -> int:
        trunk = sum(i * o + o for i, o in self.layer_shapes)
        d = self.trunk_dim
        return trunk + (d * self.action_dim + self.action_dim) + (d + 1) + self.action_dim


@dataclass
class MlpParams:
    """Layer weights (``fan_in x fan_out``), biases, two heads and ``log_std``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    mean_w: np.ndarray
    mean_b: np.ndarray
    value_w: np.ndarray
    value_b: np.ndarray
    log_std: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, self.mean_w, self.mean_b, self.value_w,
                self.value_b, self.log_std]

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def copy(self) -> MlpParams:
        return self.map(np.copy)

    def map(self, fn) -> MlpParams:
        return MlpParams([fn(w) for w in self.weights], [fn(b) for b in self.biases],
                         fn(self.mean_w), fn(self.mean_b), fn(self.value_w), fn(self.value_b),
                         fn(self.log_std))

    def zeros_like(self) -> MlpParams:
        return self.map(np.zeros_like)

    def load_flat(self, vec: np.ndarray) -> MlpParams:
        """New params with this structure filled from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        out, pos = [], 0
        for a in self.arrays():
            out.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if pos != vec.size:
            raise ValueError(f"expected {pos} parameters, got {vec.size}")
        n = len(self.weights)
        return MlpParams(out[:n], out[n:2 * n], *out[2 * n:])

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)


@dataclass
class PolicyOutput:
    mean: np.ndarray   # pre-squash, (..., action_dim)
    std: np.ndarray    # (action_dim,)
    value: np.ndarray  # (...)
    cache: list = field(default=None, repr=False)

    @property
    def log_std(self) -> np.ndarray:
        return np.log(self.std)


def init_params(config: NetConfig, seed: int = 0) -> MlpParams:
    rng = np.random.default_rng(seed)

    def uniform(fan_in, fan_out):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    weights = [uniform(i, o) for i, o in config.layer_shapes]
    biases = [np.zeros(o) for _, o in config.layer_shapes]
    d = config.trunk_dim
    return MlpParams(weights, biases,
                     uniform(d, config.action_dim), np.zeros(config.action_dim),
                     uniform(d, 1)[:, 0], np.zeros(()),
                     np.full(config.action_dim, LOG_STD_INIT))


def zero_params(config: NetConfig) -> MlpParams:
    return init_params(config).zeros_like()


def forward(params: MlpParams, obs) -> PolicyOutput:
    """Evaluate the network on one observation or a batch (rows)."""
    obs = np.asarray(obs, dtype=np.float64)
    in_dim = params.weights[0].shape[0] if params.weights else params.mean_w.shape[0]
    if obs.shape[-1] != in_dim:
        raise ValueError(f"observation has {obs.shape[-1]} components, network expects {in_dim}")
    h = obs
    acts = [h]
    for w, b in zip(params.weights, params.biases):
        h = np.tanh(h @ w + b)
        acts.append(h)
    mean = h @ params.mean_w + params.mean_b
    value = h @ params.value_w + params.value_b
    return PolicyOutput(mean, np.exp(params.log_std), value, acts)


def accumulate_gradient(params: MlpParams, output: PolicyOutput, d_mean, d_value,
                        d_log_std=None) -> MlpParams:
    """Reverse pass from the loss partials w.r.t. the network outputs.

    ``d_mean`` (B, action_dim) and ``d_value`` (B,) must already carry any
    minibatch averaging; ``d_log_std`` is the direct partial on ``log_std``.
    """
    acts = output.cache
    h = acts[-1]
    d_mean = np.atleast_2d(d_mean)
    d_value = np.atleast_1d(d_value)
    if h.ndim == 1:
        h = h[None, :]
        acts = [a[None, :] for a in acts]
    grad = params.zeros_like()
    grad.mean_w = h.T @ d_mean
    grad.mean_b = d_mean.sum(axis=0)
    grad.value_w = h.T @ d_value
    grad.value_b = np.asarray(d_value.sum())
    if d_log_std is not None:
        grad.log_std = np.array(d_log_std, dtype=np.float64)
    dh = d_mean @ params.mean_w.T + np.outer(d_value, params.value_w)
    for k in range(len(params.weights) - 1, -1, -1):
        dz = dh * (1.0 - acts[k + 1] ** 2)
        grad.weights[k] = acts[k].T @ dz
        grad.biases[k] = dz.sum(axis=0)
        if k:
            dh = dz @ params.weights[k].T
    return grad


# --- distribution ------------------------------------------------------------


def _bounds(config: NetConfig):
    low = np.asarray(config.action_low)
    high = np.asarray(config.action_high)
    return 0.5 * (high + low), 0.5 * (high - low)


def squash(raw, config: NetConfig) -> np.ndarray:
    """Map a pre-squash draw onto the action box through tanh."""
    centre, half = _bounds(config)
    return centre + half * np.tanh(raw)


def unsquash(action, config: NetConfig, eps: float = 1e-12) -> np.ndarray:
    centre, half = _bounds(config)
    y = np.clip((np.asarray(action, dtype=np.float64) - centre) / half, -1 + eps, 1 - eps)
    return np.arctanh(y)


def squash_correction(raw) -> np.ndarray:
    """``sum log(1 - tanh(u)^2)`` computed stably."""
    raw = np.asarray(raw, dtype=np.float64)
    return np.sum(2.0 * (math.log(2.0) - raw - np.logaddexp(0.0, -2.0 * raw)), axis=-1)


def gaussian_log_prob(raw, mean, log_std) -> np.ndarray:
    z = (raw - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=-1)


def log_prob(output: PolicyOutput, raw) -> np.ndarray:
    """Log-density of the squashed action whose pre-squash draw is ``raw``."""
    return gaussian_log_prob(raw, output.mean, output.log_std) - squash_correction(raw)


def entropy(output: PolicyOutput) -> float:
    """Closed-form entropy of the pre-squash Gaussian."""
    return float(np.sum(_HALF_LOG_2PIE + output.log_std))


def sample_action(output: PolicyOutput, rng: np.random.Generator, config: NetConfig):
    """Draw ``(action, log_prob, raw)``; ``action`` is already squashed into bounds."""
    raw = output.mean + output.std * rng.standard_normal(np.shape(output.mean))
    return squash(raw, config), log_prob(output, raw), raw


def mean_action(output: PolicyOutput, config: NetConfig) -> np.ndarray:
    """Deterministic (greedy) action used for evaluation."""
    return squash(output.mean, config)


class Policy:
    """Convenience bundle of a config and its parameters."""

    def __init__(self, config: NetConfig, params: MlpParams | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    def act(self, obs, deterministic: bool = True, rng=None):
        out = forward(self.params, obs)
        if deterministic:
            return mean_action(out, self.config)
        return sample_action(out, rng, self.config)[0]
