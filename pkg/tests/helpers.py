"""Shared fixtures-by-function for the test modules."""
import math

import numpy as np

from highway_ppo import ppo
from highway_ppo.policy_net import NetConfig, forward, init_params, sample_action

BANDIT_NET = NetConfig(input_dim=1, hidden_layers=(16,), action_dim=1, action_low=(-1.0,),
                       action_high=(1.0,))


class BanditEnv:
    """One state; positive actions pay 1, others 0; every episode is one step."""

    def reset(self, seed=None):
        return np.zeros(1)

    def step(self, action):
        return np.zeros(1), float(action[0] > 0), True, {}


def positive_mass(params) -> float:
    out = forward(params, np.zeros(1))
    return 0.5 * (1 + math.erf(out.mean[0] / (out.std[0] * math.sqrt(2))))


def gae_brute_force(rewards, values, dones, last_value, gamma, lam):
    """Literal truncated sum of (gamma*lam)^l * delta_{t+l}, stopping at episode ends."""
    n = len(rewards)
    nxt = list(values[1:]) + [last_value]
    delta = [rewards[t] + gamma * nxt[t] * (1 - dones[t]) - values[t] for t in range(n)]
    adv = []
    for t in range(n):
        total = 0.0
        for k in range(t, n):
            total += (gamma * lam) ** (k - t) * delta[k]
            if dones[k]:
                break
        adv.append(total)
    return np.array(adv)


def random_loss_instance(seed: int):
    """Small random network, perturbed from the behaviour policy, plus a synthetic batch."""
    rng = np.random.default_rng(seed)
    hidden = tuple(int(h) for h in rng.integers(2, 7, size=rng.integers(1, 3)))
    net = NetConfig(input_dim=5, hidden_layers=hidden, action_dim=2)
    old = init_params(net, seed)
    old.log_std[:] = rng.uniform(-1.0, 0.5, 2)
    params = old.map(lambda a: a + 0.1 * rng.standard_normal(a.shape))
    n = int(rng.integers(4, 20))
    obs = rng.uniform(-1, 1, (n, 5))
    _, lp, raw = sample_action(forward(old, obs), rng, net)
    batch = dict(obs=obs, raw_actions=raw, log_probs=lp,
                 advantages=ppo.standardize(rng.normal(size=n)),
                 value_targets=rng.normal(size=n))
    return net, params, batch


def finite_difference(params, batch, config, h=1e-5):
    theta = params.flatten()
    fd = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        up = ppo.total_loss(params.load_flat(theta + e), batch, config, with_grad=False)[0].total
        dn = ppo.total_loss(params.load_flat(theta - e), batch, config, with_grad=False)[0].total
        fd[i] = (up - dn) / (2 * h)
    return fd


def max_relative_error(g, fd, floor=1e-8):
    return float(np.max(np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)))
