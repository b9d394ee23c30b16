import math

import numpy as np
import pytest

from stylerl.nets import Adam, Mlp
from stylerl.ppo import (
    ActorCritic,
    GaussianPolicy,
    PpoConfig,
    RolloutBatch,
    build_observation,
    clipped_surrogate,
    compute_gae,
    flat_observation_batch,
    one_hot,
    policy_loss_and_grads,
    ppo_update,
    value_loss_and_grads,
)


def gae_oracle(rewards, values, terminals, bootstrap, gamma, lam):
    """Literal discounted double-sum definition of GAE."""
    horizon = len(rewards)
    deltas = []
    for t in range(horizon):
        next_v = bootstrap if t == horizon - 1 else values[t + 1]
        deltas.append(rewards[t] + gamma * next_v * (1 - terminals[t]) - values[t])
    adv = np.zeros(horizon)
    for t in range(horizon):
        total, weight = 0.0, 1.0
        for l in range(t, horizon):
            total += weight * deltas[l]
            if terminals[l]:
                break
            weight *= gamma * lam
        adv[t] = total
    return adv


# --------------------------------------------------------------------------
# observations
# --------------------------------------------------------------------------


def test_one_hot_examples():
    assert np.array_equal(one_hot(1, 3), [0, 1, 0])
    assert np.array_equal(one_hot(0, 1), [1])
    with pytest.raises(ValueError):
        one_hot(3, 3)


def test_build_observation_flat_layout():
    obs = build_observation([1.0, 2.0], [3.0], 2, 4)
    assert np.array_equal(obs.flat(), [1, 2, 3, 0, 0, 1, 0])


def test_observation_rejects_non_one_hot():
    with pytest.raises(ValueError):
        from stylerl.ppo import Observation

        Observation([1.0], [1.0], [0.5, 0.5])


def test_flat_observation_batch():
    out = flat_observation_batch(np.ones((2, 2)), np.zeros((2, 1)), np.array([0, 1]), 2)
    assert np.array_equal(out, [[1, 1, 0, 1, 0], [1, 1, 0, 0, 1]])


# --------------------------------------------------------------------------
# policy
# --------------------------------------------------------------------------


def test_act_deterministic_zero_net():
    policy = GaussianPolicy(Mlp.zeros([3, 4, 2]))
    action, logp = policy.act(np.ones(3), deterministic=True)
    assert np.array_equal(action, [0.0, 0.0])
    assert logp == pytest.approx(2 * (-0.5 * math.log(2 * math.pi)), abs=1e-12)


def test_log_prob_standard_normal():
    policy = GaussianPolicy(Mlp.zeros([1, 1]))
    _, logp = policy.act(np.zeros(1), deterministic=True)
    assert logp == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
    assert logp == pytest.approx(-0.918939, abs=1e-6)


def test_act_seed_determinism():
    rng = np.random.default_rng(0)
    policy = GaussianPolicy(Mlp([3, 8, 2], rng=rng))
    obs = np.array([0.3, -0.7, 1.1])
    a1, l1 = policy.act(obs, np.random.default_rng(99))
    a2, l2 = policy.act(obs, np.random.default_rng(99))
    assert np.array_equal(a1, a2) and l1 == l2


def test_sampled_log_prob_is_exact():
    rng = np.random.default_rng(1)
    policy = GaussianPolicy(Mlp([2, 6, 2], rng=rng), log_std=np.array([0.1, -0.4]))
    obs = rng.normal(size=2)
    action, logp = policy.act(obs, np.random.default_rng(5))
    mean = policy.mean_net.forward(obs)
    var = np.exp(2 * policy.log_std)
    expected = float(np.sum(-0.5 * ((action - mean) ** 2 / var) - 0.5 * np.log(2 * np.pi * var)))
    assert logp == pytest.approx(expected, rel=1e-12)


def test_policy_serialization_roundtrip():
    rng = np.random.default_rng(2)
    policy = GaussianPolicy(Mlp([4, 8, 2], rng=rng), log_std=np.array([0.3, -0.2]))
    restored = GaussianPolicy.from_bytes(policy.to_bytes())
    assert np.array_equal(restored.log_std, policy.log_std)
    obs = rng.normal(size=(5, 4))
    assert np.array_equal(policy.mean_net.forward(obs), restored.mean_net.forward(obs))


def test_actor_critic_act():
    rng = np.random.default_rng(3)
    ac = ActorCritic(GaussianPolicy(Mlp([3, 6, 2], rng=rng)), Mlp([3, 6, 1], rng=rng))
    action, logp, value = ac.act(np.zeros(3), np.random.default_rng(0))
    assert action.shape == (2,) and isinstance(logp, float) and isinstance(value, float)
    actions, logps, values = ac.act(np.zeros((4, 3)), np.random.default_rng(0))
    assert actions.shape == (4, 2) and logps.shape == (4,) and values.shape == (4,)


# --------------------------------------------------------------------------
# GAE
# --------------------------------------------------------------------------


def test_gae_hand_example_with_terminal():
    adv, ret = compute_gae([1.0, 0.0], [0.0, 0.0], [0, 1], 0.0, gamma=0.99, lam=0.95)
    assert np.allclose(adv, [1.0, 0.0], atol=1e-15)
    assert np.allclose(ret, adv, atol=1e-15)


def test_gae_hand_example_bootstrap():
    adv, _ = compute_gae([1.0, 1.0], [0.5, 0.5], [0, 0], 0.5, gamma=1.0, lam=1.0)
    assert np.allclose(adv, [2.0, 1.0], atol=1e-15)


def test_gae_zero_case():
    adv, ret = compute_gae(np.zeros(5), np.zeros(5), np.zeros(5), 0.0)
    assert np.all(adv == 0.0) and np.all(ret == 0.0)


def test_gae_matches_oracle_on_random_instances():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        horizon = int(rng.integers(1, 33))
        rewards = rng.normal(size=horizon)
        values = rng.normal(size=horizon)
        terminals = rng.random(horizon) < 0.15
        bootstrap = float(rng.normal())
        gamma = float(rng.uniform(0.8, 1.0))
        lam = float(rng.uniform(0.8, 1.0))
        adv, ret = compute_gae(rewards, values, terminals, bootstrap, gamma, lam)
        expected = gae_oracle(rewards, values, terminals, bootstrap, gamma, lam)
        worst = max(worst, float(np.max(np.abs(adv - expected))))
        assert np.array_equal(ret, adv + values)
    assert worst < 1e-10


def test_gae_undiscounted_equals_reversed_cumsum():
    rng = np.random.default_rng(5)
    rewards = rng.normal(size=16)
    adv, _ = compute_gae(rewards, np.zeros(16), np.zeros(16), 0.0, gamma=1.0, lam=1.0)
    assert np.allclose(adv, np.cumsum(rewards[::-1])[::-1], atol=1e-14)


def test_gae_batched_matches_per_env():
    rng = np.random.default_rng(6)
    rewards = rng.normal(size=(7, 3))
    values = rng.normal(size=(7, 3))
    terminals = rng.random((7, 3)) < 0.2
    boot = rng.normal(size=3)
    adv, _ = compute_gae(rewards, values, terminals, boot)
    for e in range(3):
        single, _ = compute_gae(rewards[:, e], values[:, e], terminals[:, e], float(boot[e]))
        assert np.array_equal(adv[:, e], single)


def test_gae_validates_shapes():
    with pytest.raises(ValueError):
        compute_gae([1.0, 2.0], [0.0], [0, 0], 0.0)
    with pytest.raises(ValueError):
        compute_gae([1.0], [0.0], [0], 0.0, gamma=1.5)


# --------------------------------------------------------------------------
# PPO update
# --------------------------------------------------------------------------


def test_clipped_surrogate_single_sample():
    # ratio 1.5, advantage +1, eps 0.2 -> objective uses clipped ratio 1.2
    assert clipped_surrogate(np.array([1.5]), np.array([1.0]), 0.2)[0] == pytest.approx(1.2)
    assert clipped_surrogate(np.array([1.0]), np.array([2.0]), 0.2)[0] == pytest.approx(2.0)
    # negative advantage: min picks the unclipped (more negative) branch
    assert clipped_surrogate(np.array([1.5]), np.array([-1.0]), 0.2)[0] == pytest.approx(-1.5)


def test_policy_gradient_matches_finite_differences():
    # two-parameter toy policy: linear mean W, b on 1-D obs/action
    rng = np.random.default_rng(7)
    policy = GaussianPolicy(Mlp([1, 1], rng=rng), log_std=np.array([0.2]))
    obs = rng.normal(size=(32, 1))
    actions = rng.normal(size=(32, 1))
    mean = policy.mean_net.forward(obs)
    old_logp = policy.log_prob(mean, actions) + rng.uniform(-0.05, 0.05, size=32)
    adv = rng.normal(size=32)
    eps, ent = 0.2, 0.01

    _, grads, _ = policy_loss_and_grads(policy, obs, actions, old_logp, adv, eps, ent)
    params = policy.param_list()
    h = 1e-7
    worst = 0.0
    for pi, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp = policy_loss_and_grads(policy, obs, actions, old_logp, adv, eps, ent)[0]
            p[idx] = old - h
            lm = policy_loss_and_grads(policy, obs, actions, old_logp, adv, eps, ent)[0]
            p[idx] = old
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - grads[pi][idx]) / max(1e-8, abs(fd) + abs(grads[pi][idx])))
    assert worst < 1e-4


def test_value_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    net = Mlp([2, 6, 1], rng=rng)
    obs = rng.normal(size=(16, 2))
    returns = rng.normal(size=16)
    _, grads = value_loss_and_grads(net, obs, returns)
    params = net.param_list()
    h = 1e-6
    worst = 0.0
    for _ in range(60):
        pi = rng.integers(0, len(params))
        idx = tuple(rng.integers(0, s) for s in params[pi].shape)
        old = params[pi][idx]
        params[pi][idx] = old + h
        lp = value_loss_and_grads(net, obs, returns)[0]
        params[pi][idx] = old - h
        lm = value_loss_and_grads(net, obs, returns)[0]
        params[pi][idx] = old
        fd = (lp - lm) / (2 * h)
        worst = max(worst, abs(fd - grads[pi][idx]) / max(1e-8, abs(fd) + abs(grads[pi][idx])))
    assert worst < 1e-4


def make_batch(rng, horizon=6, n_envs=4, obs_dim=5, act_dim=2):
    return RolloutBatch(
        obs=rng.normal(size=(horizon, n_envs, obs_dim)),
        actions=rng.normal(size=(horizon, n_envs, act_dim)),
        log_probs=rng.normal(size=(horizon, n_envs)) - 1.0,
        values=rng.normal(size=(horizon, n_envs)),
        task_rewards=rng.normal(size=(horizon, n_envs)),
        style_rewards=rng.uniform(0, 1, size=(horizon, n_envs)),
        terminals=rng.random((horizon, n_envs)) < 0.1,
        style_idx=rng.integers(0, 2, size=(horizon, n_envs)),
        bootstrap_value=rng.normal(size=n_envs),
    )


def test_total_reward_composition():
    batch = make_batch(np.random.default_rng(9))
    assert np.array_equal(batch.total_rewards, batch.task_rewards + batch.style_rewards)


def test_rollout_batch_shape_validation():
    rng = np.random.default_rng(10)
    with pytest.raises(ValueError):
        RolloutBatch(
            obs=rng.normal(size=(3, 2, 4)),
            actions=rng.normal(size=(3, 2, 1)),
            log_probs=rng.normal(size=(3, 2)),
            values=rng.normal(size=(3, 2)),
            task_rewards=rng.normal(size=(2, 2)),
            style_rewards=rng.normal(size=(3, 2)),
            terminals=np.zeros((3, 2), dtype=bool),
            style_idx=np.zeros((3, 2), dtype=int),
            bootstrap_value=np.zeros(2),
        )


def test_ppo_update_zero_lr_is_noop():
    rng = np.random.default_rng(11)
    policy = GaussianPolicy(Mlp([5, 8, 2], rng=rng))
    value = Mlp([5, 8, 1], rng=rng)
    before = [p.copy() for p in policy.param_list() + value.param_list()]
    batch = make_batch(np.random.default_rng(12))
    cfg = PpoConfig(learning_rate=0.0, minibatch_size=8, epochs=2)
    stats = ppo_update(policy, value, Adam(policy.param_list(), 0.0), Adam(value.param_list(), 0.0),
                       batch, cfg, np.random.default_rng(13))
    after = policy.param_list() + value.param_list()
    assert all(np.array_equal(a, b) for a, b in zip(before, after))
    assert stats.n_minibatches == 2 * 3  # 24 samples / 8 per minibatch * 2 epochs


def test_ppo_update_deterministic_under_seed():
    def run():
        rng = np.random.default_rng(14)
        policy = GaussianPolicy(Mlp([5, 8, 2], rng=rng))
        value = Mlp([5, 8, 1], rng=rng)
        batch = make_batch(np.random.default_rng(15))
        cfg = PpoConfig(minibatch_size=8, epochs=3)
        ppo_update(policy, value, Adam(policy.param_list(), cfg.learning_rate),
                   Adam(value.param_list(), cfg.learning_rate), batch, cfg,
                   np.random.default_rng(16))
        return policy.param_list() + value.param_list()

    p1, p2 = run(), run()
    assert all(np.array_equal(a, b) for a, b in zip(p1, p2))


def test_ppo_update_improves_surrogate_on_fixed_batch():
    rng = np.random.default_rng(17)
    policy = GaussianPolicy(Mlp([5, 8, 2], rng=rng))
    value = Mlp([5, 8, 1], rng=rng)
    batch = make_batch(np.random.default_rng(18), horizon=16, n_envs=8)
    cfg = PpoConfig(minibatch_size=32, epochs=4, learning_rate=1e-3)
    stats = ppo_update(policy, value, Adam(policy.param_list(), cfg.learning_rate),
                       Adam(value.param_list(), cfg.learning_rate), batch, cfg,
                       np.random.default_rng(19))
    assert math.isfinite(stats.policy_loss) and math.isfinite(stats.value_loss)
    assert 0.0 <= stats.clip_frac <= 1.0
