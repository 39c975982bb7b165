import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from highway_ppo import ppo
from highway_ppo.env import HighwayEnv, preset
from highway_ppo.policy_net import NetConfig, forward, init_params, log_prob, sample_action

from helpers import (BANDIT_NET, BanditEnv, finite_difference, gae_brute_force,
                     max_relative_error, positive_mass, random_loss_instance)

CFG = ppo.PpoConfig()


def test_config_defaults_and_validation():
    assert (CFG.gamma, CFG.lam, CFG.clip, CFG.horizon, CFG.minibatch) == (0.8, 0.92, 0.2, 512, 64)
    assert (CFG.epochs, CFG.actors, CFG.c1, CFG.c2, CFG.lr) == (10, 4, 0.5, 0.01, 0.01)
    assert CFG.optimizer == "sgd"
    for bad in (dict(gamma=0.0), dict(lam=1.5), dict(clip=1.0), dict(minibatch=4096),
                dict(optimizer="rmsprop")):
        with pytest.raises(ValueError):
            ppo.PpoConfig(**bad)


def test_gae_examples():
    adv, targets = ppo.gae([1, 1], [0, 0], [False, False], 0.0, 0.8, 0.92)
    assert np.allclose(adv, [1.736, 1.0], atol=1e-12)
    assert np.array_equal(targets, adv)
    assert np.all(ppo.gae(np.zeros(5), np.zeros(5), np.zeros(5), 0.0, 0.8, 0.92)[0] == 0)
    r, v = np.array([0.3, -1.0, 2.0]), np.array([0.5, 0.1, -0.4])
    adv0, _ = ppo.gae(r, v, [False, False, False], 0.7, 0.8, 0.0)
    assert np.allclose(adv0, r + 0.8 * np.append(v[1:], 0.7) - v, atol=1e-15)
    with pytest.raises(ValueError):
        ppo.gae([], [], [], 0.0, 0.8, 0.92)


@settings(max_examples=100)
@given(st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_gae_matches_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=n), rng.normal(size=n)
    d = rng.random(n) < 0.2
    last = float(rng.normal())
    adv, _ = ppo.gae(r, v, d, last, 0.8, 0.92)
    assert np.max(np.abs(adv - gae_brute_force(r, v, d, last, 0.8, 0.92))) <= 1e-10


def test_done_boundary_isolation():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=20), rng.normal(size=20)
    d = np.zeros(20, dtype=bool)
    d[9] = True
    a1, _ = ppo.gae(r, v, d, 0.3, 0.8, 0.92)
    r2 = r.copy()
    r2[10:] += rng.normal(size=10) * 100
    a2, _ = ppo.gae(r2, v, d, 5.0, 0.8, 0.92)
    assert np.array_equal(a1[:10], a2[:10])


def test_ratio_and_clip_examples():
    assert ppo.probability_ratio(0.3, 0.3) == 1.0
    assert ppo.probability_ratio(np.log(2.0), 0.0) == pytest.approx(2.0)
    assert ppo.clipped_policy_loss([1.5], [1.0], 0.2) == pytest.approx(1.2)
    assert ppo.clipped_policy_loss([1.5], [-1.0], 0.2) == pytest.approx(-1.5)
    assert ppo.clipped_policy_loss([1.0, 1.0], [0.4, -2.0], 0.2) == pytest.approx(-0.8)


@given(st.lists(st.tuples(st.floats(0, 5), st.floats(-3, 3)), min_size=1, max_size=30))
def test_clip_bound(pairs):
    # the bound is one-sided: with a negative advantage the min keeps the unclipped term
    ratios, adv = np.array(pairs).T
    value = ppo.clipped_policy_loss(ratios, adv, 0.2)
    assert value <= np.max(np.abs(adv)) * 1.2 + 1e-12
    assert value >= -np.max(np.abs(adv)) * max(1.2, ratios.max()) - 1e-12


def test_identity_at_old_parameters():
    for seed in range(5):
        net, params, batch = random_loss_instance(seed)
        lp = log_prob(forward(params, batch["obs"]), batch["raw_actions"])
        batch["log_probs"] = lp
        assert np.max(np.abs(ppo.probability_ratio(lp, batch["log_probs"]) - 1)) <= 1e-12
        terms, _ = ppo.total_loss(params, batch, CFG, with_grad=False)
        assert abs(terms.clip_objective) <= 1e-10
        assert terms.total == pytest.approx(CFG.c1 * terms.value_loss - CFG.c2 * terms.entropy,
                                            abs=1e-12)


def test_coefficient_zeroing():
    net, params, batch = random_loss_instance(1)
    cfg = ppo.PpoConfig(c1=0.0, c2=0.0)
    terms, _ = ppo.total_loss(params, batch, cfg, with_grad=False)
    assert terms.total == -terms.clip_objective


def test_gradient_matches_finite_differences():
    worst = 0.0
    for seed in range(5):
        net, params, batch = random_loss_instance(seed)
        _, grad = ppo.total_loss(params, batch, CFG)
        worst = max(worst, max_relative_error(grad.flatten(), finite_difference(params, batch, CFG)))
    assert worst <= 1e-4


def _synthetic_buffer(net, seed, n=64):
    rng = np.random.default_rng(seed)
    params = init_params(net, seed)
    obs = rng.uniform(-1, 1, (n, net.input_dim))
    out = forward(params, obs)
    _, lp, raw = sample_action(out, rng, net)
    return params, ppo.RolloutBuffer(obs, raw, lp, rng.random(n), out.value, rng.random(n) < 0.1,
                                     0.0)


def test_update_is_deterministic():
    net = NetConfig(hidden_layers=(8,))
    cfg = ppo.PpoConfig(horizon=64, actors=1, minibatch=16, epochs=2)
    runs = []
    for _ in range(2):
        params, buf = _synthetic_buffer(net, 3)
        new, stats = ppo.update(params, [buf], cfg, np.random.default_rng(0))
        runs.append(new.flatten())
    assert np.array_equal(runs[0], runs[1])
    assert all(np.isfinite(v) for v in stats.values())


def test_zero_advantage_update_only_moves_log_std():
    net = NetConfig(hidden_layers=(8,))
    cfg = ppo.PpoConfig(horizon=64, actors=1, minibatch=16, epochs=1)
    params, buf = _synthetic_buffer(net, 4)
    buf.advantages = np.zeros(64)
    buf.value_targets = forward(params, buf.obs).value
    new, _ = ppo.update(params, [buf], cfg, np.random.default_rng(0))
    diff = new.flatten() - params.flatten()
    assert np.max(np.abs(diff[:-2])) == 0.0
    steps = 64 // 16
    assert np.allclose(diff[-2:], steps * cfg.lr * cfg.c2)


def test_divergence_is_reported():
    net = NetConfig(hidden_layers=(4,))
    params, buf = _synthetic_buffer(net, 5, n=64)
    buf.rewards[3] = np.nan
    with pytest.raises(ppo.TrainingDiverged):
        ppo.update(params, [buf], ppo.PpoConfig(horizon=64, actors=1), np.random.default_rng(0))


def test_log_std_clamped():
    net = NetConfig(hidden_layers=(4,))
    params, buf = _synthetic_buffer(net, 6)
    params.log_std[:] = 1.99
    cfg = ppo.PpoConfig(horizon=64, actors=1, c2=1e4, max_grad_norm=0.0, lr=1.0, epochs=1)
    new, _ = ppo.update(params, [buf], cfg, np.random.default_rng(0))
    assert np.all(new.log_std <= 2.0)


def test_iterations_zero_returns_initial():
    net = NetConfig(hidden_layers=(4,))
    p = init_params(net, 0)
    res = ppo.train(lambda i: HighwayEnv(), net, ppo.PpoConfig(iterations=0), params=p)
    assert np.array_equal(res.params.flatten(), p.flatten()) and res.stats == []


def test_single_worker_training_is_reproducible():
    net = NetConfig(hidden_layers=(8,))
    cfg = ppo.PpoConfig(iterations=3, horizon=64, actors=1, seed=2)
    scen = preset("default")

    def run():
        return ppo.train(lambda i: HighwayEnv(scen, seed=10 + i), net, cfg)

    a, b = run(), run()
    assert np.array_equal(a.params.flatten(), b.params.flatten())
    assert a.stats == b.stats and a.episode_returns == b.episode_returns
    assert [s.iteration for s in a.stats] == [0, 1, 2]
    assert a.stats[-1].env_steps == 3 * 64


def test_adam_switch_runs():
    cfg = ppo.PpoConfig(iterations=30, horizon=64, actors=1, optimizer="adam", lr=0.01)
    res = ppo.train(lambda i: BanditEnv(), BANDIT_NET, cfg)
    assert positive_mass(res.params) > 0.9


def test_bandit_small_rollouts():
    cfg = ppo.PpoConfig(iterations=200, horizon=64, actors=1)
    res = ppo.train(lambda i: BanditEnv(), BANDIT_NET, cfg)
    assert positive_mass(res.params) > 0.9
