"""Tests for the hinge WGAN critic and mixture batch assembly."""

import numpy as np
import pytest

from mimic.critic import (
    Critic,
    CriticBatch,
    CriticConfig,
    assemble_mixture_batch,
    critic_train_step,
    gradient_penalty,
    hinge_critic_loss,
    pseudo_reward,
    truncated_objective,
)
from mimic.exceptions import InvalidInput, InvalidParameter, InvalidState
from mimic.nets import Adam, DenseLayer, MLPParams, init_mlp
from mimic.policy import GaussianPolicy
from mimic.rollouts import PolicyQueue, collect_real
from mimic.envs import TwoArmBandit
from mimic.transition import Normalizer, TransitionModel


def _critic(rng=None, state_dim=2, action_dim=1, spectral_norm=False, hidden=(16, 16)):
    rng = rng or np.random.default_rng(0)
    return Critic(state_dim, action_dim, Normalizer(state_dim), rng, hidden=hidden,
                  spectral_norm=spectral_norm)


def _batch(rng, n_real=8, n_fake=8, state_dim=2, action_dim=1, shift=0.0):
    return CriticBatch(
        real_states=rng.normal(size=(n_real, state_dim)) + shift,
        real_actions=rng.normal(size=(n_real, action_dim)),
        real_next_states=rng.normal(size=(n_real, state_dim)) + shift,
        fake_states=rng.normal(size=(n_fake, state_dim)) - shift,
        fake_actions=rng.normal(size=(n_fake, action_dim)),
        fake_next_states=rng.normal(size=(n_fake, state_dim)) - shift,
    )


def _zero_critic(critic):
    for layer in critic.net.layers:
        layer.weight[...] = 0.0
        layer.bias[...] = 0.0
    return critic


class TestHingeLoss:
    def test_zero_critic_delta_one_gives_two(self):
        rng = np.random.default_rng(1)
        critic = _zero_critic(_critic(rng))
        assert hinge_critic_loss(critic, _batch(rng), 1.0) == pytest.approx(2.0)

    def test_separated_scores_give_zero(self):
        rng = np.random.default_rng(2)
        critic = _zero_critic(_critic(rng))
        critic.net.layers[-1].bias[...] = 2.0  # f = +2 everywhere
        batch = _batch(rng)
        f_real = np.maximum(0.0, 1.0 - 2.0).mean()
        assert f_real == 0.0
        # Manually check the two-sided case with a sign-flipping critic is 0:
        # use values f(real) = +2 and f(fake) = -2 through the identity below.
        assert np.maximum(0.0, 1.0 - 2.0) + np.maximum(0.0, 1.0 + -2.0) == 0.0

    def test_truncated_plus_hinge_is_two_delta(self):
        rng = np.random.default_rng(3)
        for k in range(25):
            critic = _critic(np.random.default_rng(k), hidden=(8, 8))
            batch = _batch(rng, n_real=5, n_fake=7)
            delta = float(rng.uniform(0.2, 3.0))
            total = truncated_objective(critic, batch, delta) + hinge_critic_loss(critic, batch, delta)
            assert total == pytest.approx(2.0 * delta, abs=1e-12)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(4)
        for k in range(10):
            critic = _critic(np.random.default_rng(100 + k), hidden=(8,))
            assert hinge_critic_loss(critic, _batch(rng), 1.0) >= 0.0


class TestPseudoReward:
    def test_zero_critic_scores_zero(self):
        rng = np.random.default_rng(5)
        critic = _zero_critic(_critic(rng))
        batch = _batch(rng)
        vals = pseudo_reward(critic, batch.real_states, batch.real_actions, batch.real_next_states)
        assert np.all(vals == 0.0)

    def test_equals_forward_on_concatenated_triple(self):
        rng = np.random.default_rng(6)
        critic = _critic(rng)
        s = rng.normal(size=(4, 2))
        a = rng.normal(size=(4, 1))
        sp = rng.normal(size=(4, 2))
        from mimic.nets import forward

        direct = forward(critic.net, critic.triple_inputs(s, a, sp))[:, 0]
        assert np.array_equal(pseudo_reward(critic, s, a, sp), direct)

    def test_one_step_separates_clusters(self):
        rng = np.random.default_rng(7)
        critic = _critic(rng, spectral_norm=True)
        batch = _batch(rng, n_real=64, n_fake=64, shift=2.0)
        opt = Adam(1e-3)
        for _ in range(5):
            critic_train_step(critic, batch, CriticConfig(), rng, opt)
        real_mean = pseudo_reward(critic, batch.real_states, batch.real_actions, batch.real_next_states).mean()
        fake_mean = pseudo_reward(critic, batch.fake_states, batch.fake_actions, batch.fake_next_states).mean()
        assert real_mean > fake_mean


class TestGradientPenalty:
    def test_unit_norm_linear_critic_zero_penalty(self):
        rng = np.random.default_rng(8)
        norm = Normalizer(2)
        w = rng.standard_normal((1, 5))
        w /= np.linalg.norm(w)
        critic = Critic(2, 1, norm, rng, hidden=())
        critic.net = MLPParams([DenseLayer(w, np.zeros(1))])
        assert gradient_penalty(critic, _batch(rng), rng) == pytest.approx(0.0, abs=1e-12)

    def test_constant_critic_penalty_one(self):
        rng = np.random.default_rng(9)
        critic = _zero_critic(_critic(rng))
        assert gradient_penalty(critic, _batch(rng), rng) == pytest.approx(1.0)

    def test_penalty_matches_finite_difference_norms(self):
        # Finite-difference estimate of ||grad_x f|| on the same interpolates.
        rng = np.random.default_rng(10)
        critic = _critic(rng, hidden=(8, 8))
        batch = _batch(rng, n_real=6, n_fake=6)
        from mimic.critic import _interpolates
        from mimic.nets import forward, input_gradient

        x = _interpolates(batch, critic, np.random.default_rng(0))
        g = input_gradient(critic.net, x)
        h = 1e-5
        fd = np.zeros_like(g)
        for j in range(x.shape[1]):
            e = np.zeros_like(x)
            e[:, j] = h
            fd[:, j] = (forward(critic.net, x + e)[:, 0] - forward(critic.net, x - e)[:, 0]) / (2 * h)
        assert np.max(np.abs(np.linalg.norm(fd, axis=1) - np.linalg.norm(g, axis=1))) < 1e-3

    def test_mismatched_counts_paired_by_random_matching(self):
        rng = np.random.default_rng(11)
        critic = _critic(rng)
        batch = _batch(rng, n_real=3, n_fake=10)
        val = gradient_penalty(critic, batch, rng)
        assert np.isfinite(val) and val >= 0.0


class TestTrainStep:
    def test_spectral_norm_bounds_layer_norms(self):
        rng = np.random.default_rng(12)
        critic = _critic(rng, spectral_norm=True)
        batch = _batch(rng, n_real=32, n_fake=32)
        opt = Adam(1e-3)
        for _ in range(10):
            critic_train_step(critic, batch, CriticConfig(spectral_norm=True), rng, opt)
        for layer in critic.net.layers:
            top = np.linalg.svd(layer.weight, compute_uv=False)[0]
            assert top <= 1.0 + 1e-3

    def test_gp_off_mode_skips_penalty(self):
        rng = np.random.default_rng(13)
        critic = _critic(rng)
        stats = critic_train_step(critic, _batch(rng), CriticConfig(gp_mode="off", spectral_norm=False), rng, Adam(1e-3))
        assert stats["gradient_penalty"] == 0.0

    def test_loss_decreases_on_fixed_batch(self):
        rng = np.random.default_rng(14)
        critic = _critic(rng, spectral_norm=False)
        batch = _batch(rng, n_real=64, n_fake=64, shift=1.5)
        cfg = CriticConfig(spectral_norm=False, gp_weight=1.0)
        opt = Adam(3e-3)
        first = hinge_critic_loss(critic, batch, cfg.delta)
        for _ in range(30):
            critic_train_step(critic, batch, cfg, rng, opt)
        assert hinge_critic_loss(critic, batch, cfg.delta) < first

    def test_empty_side_rejected(self):
        rng = np.random.default_rng(15)
        with pytest.raises(InvalidInput):
            CriticBatch(
                real_states=np.zeros((0, 2)), real_actions=np.zeros((0, 1)),
                real_next_states=np.zeros((0, 2)), fake_states=np.zeros((3, 2)),
                fake_actions=np.zeros((3, 1)), fake_next_states=np.zeros((3, 2)),
            )

    def test_invalid_config(self):
        with pytest.raises(InvalidParameter):
            CriticConfig(delta=0.0)
        with pytest.raises(InvalidParameter):
            CriticConfig(gp_mode="clip")


class TestMixtureBatch:
    def _setup(self, seed=0, q=2, pushes=3, steps=40):
        rng = np.random.default_rng(seed)
        env = TwoArmBandit()
        norm = Normalizer(1)
        policy = GaussianPolicy(1, env.action_low, env.action_high, norm, rng, hidden=(8,))
        model = TransitionModel(1, 1, norm, rng, hidden=(8,))
        queue = PolicyQueue(q)
        for _ in range(pushes):
            collect_real(env, policy, steps, rng, norm, queue)
            policy.version += 1
        return rng, model, queue

    def test_queue_eviction_keeps_latest(self):
        rng, model, queue = self._setup(pushes=3, q=2)
        assert len(queue) == 2
        versions = [e.snapshot.version for e in queue.entries()]
        assert versions == [1, 2]

    def test_equal_contribution_across_datasets(self):
        rng, model, queue = self._setup(pushes=2, q=2)
        batch = assemble_mixture_batch(queue, model, rng, n_real=10**4, n_fake=8, horizon=4)
        share = (batch.real_source == 0).mean()
        assert abs(share - 0.5) < 0.02

    def test_single_policy_queue_reduces_to_plain_batch(self):
        rng, model, queue = self._setup(pushes=1, q=1)
        batch = assemble_mixture_batch(queue, model, rng, n_real=32, n_fake=16, horizon=4)
        assert np.all(batch.real_source == 0) and np.all(batch.fake_source == 0)
        assert len(batch.fake_states) == 16

    def test_empty_queue_is_invalid_state(self):
        rng = np.random.default_rng(1)
        model = TransitionModel(1, 1, Normalizer(1), rng, hidden=(8,))
        with pytest.raises(InvalidState):
            assemble_mixture_batch(PolicyQueue(2), model, rng, 8, 8, 4)

    def test_fake_triples_counted_and_sourced(self):
        rng, model, queue = self._setup(pushes=2, q=2)
        batch = assemble_mixture_batch(queue, model, rng, n_real=16, n_fake=33, horizon=5)
        assert len(batch.fake_states) == 33
        assert set(np.unique(batch.fake_source)) == {0, 1}
