import math

import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import make_config, numeric_grad
from mmlink.controllers.ppo import (
    MmWavePolicyEnv, PpoAgent, PpoConfig, PpoController, RolloutBatch, act, actor_loss, architecture_for,
    clipped_surrogate, compute_gae, critic_loss, critic_targets, ppo_loss_fn, train,
)
from mmlink.env import MmWaveEnv
from mmlink.nn import (
    Architecture, MlpParams, forward, init_params, masked_entropy, masked_log_softmax, masked_softmax,
    value_and_grad, zero_params,
)


def batch_of(rewards, values, next_value=0.0):
    n = len(rewards)
    return RolloutBatch(
        features=np.zeros((n, 1)), masks=np.ones((n, 2), dtype=bool), actions=np.zeros(n, dtype=int),
        rewards=np.asarray(rewards, dtype=float), values=np.asarray(values, dtype=float),
        log_probs=np.zeros(n), next_value=next_value,
    )


def rollout(params: MlpParams, rng: np.random.Generator, n: int = 6) -> RolloutBatch:
    """Random feasible steps sampled from `params`."""
    arch = params.arch
    features = rng.random((n, arch.n_inputs))
    masks = rng.random((n, arch.n_actions)) < 0.6
    masks[:, 0] = True
    steps = [act(params, f, m, rng) for f, m in zip(features, masks)]
    actions, log_probs, values = (np.array(col) for col in zip(*steps))
    return RolloutBatch(features, masks, actions, rng.normal(size=n), values.astype(float),
                        log_probs.astype(float), next_value=0.3)


class TwoArmEnv:
    """Stateless bandit: action 0 pays 1, action 1 pays 0."""

    def observe(self):
        return np.ones(1), np.ones(2, dtype=bool)

    def step(self, index: int) -> float:
        return 1.0 if index == 0 else 0.0


def test_gae_reference():
    adv, returns = compute_gae(batch_of([1.0, 0.0], [0.0, 1.0], next_value=2.0), gamma=0.5)
    np.testing.assert_allclose(adv, [1.5, 0.0])
    np.testing.assert_allclose(returns, [1.5, 1.0])


def test_gae_zero_inputs():
    adv, _ = compute_gae(batch_of([0, 0, 0], [0, 0, 0]), gamma=0.999)
    assert np.all(adv == 0)


def test_gae_equals_bootstrapped_return_minus_value():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 12))
        gamma = float(rng.random())
        batch = batch_of(rng.normal(size=n), rng.normal(size=n), float(rng.normal()))
        adv, _ = compute_gae(batch, gamma)
        q_hat = np.array([
            sum(gamma ** (l - t) * batch.rewards[l] for l in range(t, n)) + gamma ** (n - t) * batch.next_value
            for t in range(n)
        ])
        np.testing.assert_allclose(adv, q_hat - batch.values, atol=1e-12)


def test_critic_reference_loss():
    targets = critic_targets(np.array([2.0]), bootstrap=4.0, gamma=0.5)
    assert targets[0] == 4.0
    assert critic_loss(np.array([0.0]), targets) == 16.0
    assert critic_loss(targets, targets) == 0.0


def test_clipped_surrogate_branches():
    assert clipped_surrogate(1.5, 1.0, 0.2) == pytest.approx(1.2)
    assert clipped_surrogate(0.5, -1.0, 0.2) == pytest.approx(-0.8)
    assert clipped_surrogate(1.0, 3.0, 0.2) == pytest.approx(3.0)


def test_actor_loss_at_old_policy_is_mean_advantage():
    rng = np.random.default_rng(1)
    params = init_params(Architecture(5, 7, (6,)), rng)
    batch = rollout(params, rng)
    adv = rng.normal(size=len(batch))
    cfg = PpoConfig(entropy_coef=0.0)
    assert actor_loss(params, batch, adv, cfg) == pytest.approx(-adv.mean())


def test_act_with_single_feasible_action():
    params = init_params(Architecture(4, 6, (5,)), np.random.default_rng(2))
    mask = np.zeros(6, dtype=bool)
    mask[4] = True
    index, log_prob, _ = act(params, np.ones(4), mask, np.random.default_rng(0))
    assert index == 4
    assert log_prob == 0.0


def test_act_is_uniform_under_zero_logits():
    params = zero_params(Architecture(4, 8, (5,)))
    mask = np.array([1, 1, 0, 1, 1, 0, 1, 1], dtype=bool)
    rng = np.random.default_rng(3)
    counts = np.zeros(8)
    for _ in range(10_000):
        index, log_prob, value = act(params, np.ones(4), mask, rng)
        counts[index] += 1
    assert counts[~mask].sum() == 0
    assert log_prob == pytest.approx(-math.log(6))
    assert value == 0.0
    assert chisquare(counts[mask]).pvalue > 1e-3


@pytest.mark.parametrize('shared', [True, False])
def test_ppo_loss_gradient_matches_finite_differences(shared):
    rng = np.random.default_rng(4)
    arch = Architecture(5, 10, (6, 4), shared_trunk=shared)
    old = init_params(arch, rng)
    batch = rollout(old, rng)
    params = MlpParams.from_flat(arch, old.flat() + rng.normal(0, 0.05, size=len(old.flat())))
    adv, _ = compute_gae(batch, 0.9)
    targets = critic_targets(batch.rewards, batch.values[-1], 0.9)
    loss_fn = ppo_loss_fn(batch, adv, targets, PpoConfig(clip=100.0, entropy_coef=0.05))

    _, grads = value_and_grad(params, batch.features, loss_fn)

    def loss(p):
        logits, values = forward(p, batch.features)
        return loss_fn(logits, values)[0]

    np.testing.assert_allclose(grads.flat(), numeric_grad(params, loss), rtol=1e-4, atol=1e-7)


def test_ppo_loss_gradient_at_old_policy_with_tight_clip():
    rng = np.random.default_rng(5)
    params = init_params(Architecture(5, 10, (6,)), rng)
    batch = rollout(params, rng)
    adv, returns = compute_gae(batch, 0.999)
    loss_fn = ppo_loss_fn(batch, adv, returns, PpoConfig())
    _, grads = value_and_grad(params, batch.features, loss_fn)

    def loss(p):
        logits, values = forward(p, batch.features)
        return loss_fn(logits, values)[0]

    np.testing.assert_allclose(grads.flat(), numeric_grad(params, loss), rtol=1e-4, atol=1e-7)


def test_unclipped_actor_gradient_is_vanilla_policy_gradient():
    rng = np.random.default_rng(6)
    params = init_params(Architecture(5, 10, (6,), shared_trunk=False), rng)
    batch = rollout(params, rng)
    adv = rng.normal(size=len(batch))
    logits, values = forward(params, batch.features)
    targets = np.asarray(values, dtype=float)
    _, ppo_grads = value_and_grad(params, batch.features,
                                  ppo_loss_fn(batch, adv, targets, PpoConfig(clip=1e9, entropy_coef=0.0)))

    n = len(batch)

    def vanilla(logits, values):
        log_probs = masked_log_softmax(logits, batch.masks)
        onehot = np.zeros_like(log_probs)
        onehot[np.arange(n), batch.actions] = 1.0
        loss = -np.mean(adv * log_probs[np.arange(n), batch.actions])
        dlogits = -adv[:, None] * (onehot - np.exp(log_probs)) / n
        return loss, dlogits, np.zeros_like(values)

    _, pg_grads = value_and_grad(params, batch.features, vanilla)
    for name in params.names():
        if name.startswith(('actor.', 'policy.')):
            np.testing.assert_allclose(ppo_grads[name], pg_grads[name], rtol=1e-9, atol=1e-12)


def test_uniform_policy_maximizes_masked_entropy():
    rng = np.random.default_rng(7)
    mask = np.array([True, True, False, True, False, True])
    best = math.log(4)
    logp = masked_log_softmax(np.zeros(6), mask)
    assert masked_entropy(np.exp(logp), logp) == pytest.approx(best)
    for _ in range(200):
        logp = masked_log_softmax(rng.normal(0, 2, size=6), mask)
        assert masked_entropy(np.exp(logp), logp) <= best + 1e-12


def test_vanishing_learning_rate_keeps_policy():
    rng = np.random.default_rng(8)
    params = init_params(Architecture(5, 10, (6,)), rng)
    batch = rollout(params, rng)
    agent = PpoAgent(params.copy(), PpoConfig(lr=1e-12), rng)
    agent.update(batch)
    before = masked_softmax(forward(params, batch.features)[0], batch.masks)
    after = masked_softmax(forward(agent.params, batch.features)[0], batch.masks)
    np.testing.assert_allclose(after, before, atol=1e-8)
    assert agent.updates == 1


def test_train_with_no_steps_returns_params_unchanged():
    params = init_params(Architecture(1, 2, (8,)), np.random.default_rng(9))
    trained, log = train(TwoArmEnv(), params, PpoConfig(), np.random.default_rng(0), total_steps=0)
    np.testing.assert_array_equal(trained.flat(), params.flat())
    assert log == []


def test_train_is_deterministic():
    logs = []
    for _ in range(2):
        params = init_params(Architecture(1, 2, (8,)), np.random.default_rng(10))
        _, log = train(TwoArmEnv(), params, PpoConfig(), np.random.default_rng(11), total_steps=50)
        logs.append(log)
    assert len(logs[0]) == 10
    assert logs[0] == logs[1]


def test_two_arm_bandit_converges():
    params = init_params(Architecture(1, 2, (8,)), np.random.default_rng(12))
    cfg = PpoConfig(gamma=0.0, clip=0.2, entropy_coef=0.01, batch_size=5, lr=0.02, lr_decay=1.0)
    trained, log = train(TwoArmEnv(), params, cfg, np.random.default_rng(13), total_steps=2000)
    probs = masked_softmax(forward(trained, np.ones(1))[0], np.ones(2, dtype=bool))
    assert probs[0] > 0.95
    assert len(log) == 400


def test_train_reports_progress_per_iteration():
    messages = []
    params = init_params(Architecture(1, 2, (4,)), np.random.default_rng(14))
    train(TwoArmEnv(), params, PpoConfig(), np.random.default_rng(0), total_steps=30,
          steps_per_iteration=10, progress_callback=messages.append)
    assert len(messages) == 3
    assert messages[0].startswith("Iteration 1/3: mean reward")


def small_ppo_config(**overrides):
    return make_config(ppo_hidden=(8,), ppo_batch=2, **overrides)


def test_controller_updates_every_batch():
    cfg = small_ppo_config()
    env = MmWaveEnv(cfg, np.random.default_rng(0))
    controller = PpoController(cfg, np.random.default_rng(1))
    assert controller.arch == architecture_for(cfg)
    for _ in range(40):
        result = env.execute_slot(controller.act(env.observe()))
        controller.observe(result)
    assert controller.agent.updates == 20
    assert set(controller.last_info) >= {'actor_loss', 'critic_loss', 'entropy', 'loss', 'lr'}


def test_frozen_controller_does_not_learn():
    cfg = small_ppo_config()
    env = MmWaveEnv(cfg, np.random.default_rng(0))
    controller = PpoController(cfg, np.random.default_rng(1))
    controller.freeze()
    before = controller.agent.params.flat()
    for _ in range(10):
        controller.observe(env.execute_slot(controller.act(env.observe())))
    np.testing.assert_array_equal(controller.agent.params.flat(), before)
    assert controller.agent.updates == 0


def test_controller_checkpoint_round_trip(tmp_path):
    cfg = small_ppo_config()
    controller = PpoController(cfg, np.random.default_rng(2))
    controller.save(tmp_path / 'ppo.ckpt')
    other = PpoController(cfg, np.random.default_rng(3))
    other.load(tmp_path / 'ppo.ckpt')
    np.testing.assert_array_equal(other.agent.params.flat(), controller.agent.params.flat())


def test_policy_env_trains_on_simulator():
    cfg = small_ppo_config()
    policy_env = MmWavePolicyEnv(MmWaveEnv(cfg, np.random.default_rng(4)), cfg)
    params = init_params(architecture_for(cfg), np.random.default_rng(5))
    trained, log = train(policy_env, params, PpoConfig.from_scenario(cfg), np.random.default_rng(6), total_steps=20)
    assert len(log) == 10
    assert trained.is_finite()
    assert policy_env.env.t == 20
