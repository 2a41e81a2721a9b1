"""Tests for the normalizer and the transition learner."""

import numpy as np
import pytest

from mimic.exceptions import InvalidParameter
from mimic.nets import Adam
from mimic.transition import (
    Normalizer,
    TransitionLossConfig,
    TransitionModel,
    l2_loss,
    pseudo_advantages,
    total_transition_loss,
    transition_ppo_loss,
    transition_update_step,
    update_normalizer,
)


def _model(rng=None, state_dim=2, action_dim=1, **kw):
    rng = rng or np.random.default_rng(0)
    norm = Normalizer(state_dim)
    return TransitionModel(state_dim, action_dim, norm, rng, hidden=(16, 16), **kw)


class TestNormalizer:
    def test_population_convention(self):
        n = Normalizer(1)
        n.update(np.array([[0.0], [2.0]]))
        assert n.mean[0] == pytest.approx(1.0)
        assert n.std[0] == pytest.approx(1.0)  # population std, no Bessel

    def test_streaming_matches_two_pass_oracle(self):
        rng = np.random.default_rng(1)
        data = rng.normal(3.0, 2.5, size=(10**4, 3))
        n = Normalizer(3)
        for chunk in np.array_split(data, 13):
            update_normalizer(n, chunk)
        assert np.max(np.abs(n.mean - data.mean(axis=0))) < 1e-10
        assert np.max(np.abs(n.std - data.std(axis=0))) < 1e-10

    def test_empty_update_unchanged(self):
        n = Normalizer(2)
        n.update(np.array([[1.0, 2.0]]))
        mean, std = n.mean.copy(), n.std.copy()
        n.update(np.empty((0, 2)))
        assert np.array_equal(n.mean, mean) and np.array_equal(n.std, std)

    def test_identity_before_any_data(self):
        n = Normalizer(2)
        x = np.array([[3.0, -1.0]])
        assert np.array_equal(n.normalize(x), x)

    def test_std_floored(self):
        n = Normalizer(1)
        n.update(np.full((100, 1), 7.0))
        assert n.std[0] == pytest.approx(1e-8)

    def test_state_dict_round_trip(self):
        n = Normalizer(2)
        n.update(np.random.default_rng(2).normal(size=(50, 2)))
        back = Normalizer.from_state_dict(n.state_dict())
        assert np.array_equal(back.mean, n.mean)
        assert np.array_equal(back.std, n.std)
        assert back.count == n.count


class TestPrediction:
    def test_zero_net_is_identity_transition(self):
        model = _model()
        for layer in model.approx.net.layers:
            layer.weight[...] = 0.0
            layer.bias[...] = 0.0
        s = np.array([[1.5, -2.0]])
        assert np.allclose(model.predict_next_state_mean(s, np.zeros((1, 1))), s)

    def test_decode_arithmetic(self):
        model = _model()
        model.normalizer.update(np.array([[0.0, 0.0], [4.0, 4.0]]))  # std = 2
        # Force the network output to a fixed difference of (0.5, -0.5).
        out_layer = model.approx.net.layers[-1]
        for layer in model.approx.net.layers:
            layer.weight[...] = 0.0
            layer.bias[...] = 0.0
        out_layer.bias[...] = np.array([0.5, -0.5])
        got = model.predict_next_state_mean(np.array([[1.0, 2.0]]), np.zeros((1, 1)))
        assert np.allclose(got, np.array([[2.0, 1.0]]))

    def test_target_round_trip(self):
        rng = np.random.default_rng(3)
        model = _model(rng)
        model.normalizer.update(rng.normal(2.0, 3.0, size=(100, 2)))
        s = rng.normal(size=(10, 2))
        sp = rng.normal(size=(10, 2))
        target = model.diff_targets(s, sp)
        decoded = s + model.normalizer.std * target
        assert np.max(np.abs(decoded - sp)) < 1e-10

    def test_mean_rollouts_are_deterministic(self):
        rng = np.random.default_rng(4)
        model = _model(rng)
        s = rng.normal(size=(3, 2))
        a = rng.normal(size=(3, 1))
        first = model.predict_next_state_mean(s, a)
        assert np.array_equal(first, model.predict_next_state_mean(s, a))

    def test_sample_logp_matches_log_prob(self):
        rng = np.random.default_rng(5)
        model = _model(rng)
        s = rng.normal(size=(6, 2))
        a = rng.normal(size=(6, 1))
        nxt, logp = model.sample_next_state(s, a, np.random.default_rng(9))
        assert np.allclose(logp, model.log_prob(s, a, nxt), atol=1e-10)


class TestPseudoAdvantages:
    def test_constant_reward_centered_to_zero(self):
        cfg = TransitionLossConfig(adv_discount=0.9)
        adv = pseudo_advantages(np.full((4, 6), 3.3), cfg)
        assert np.max(np.abs(adv)) < 1e-12

    def test_single_step_no_baseline_is_reward(self):
        cfg = TransitionLossConfig(baseline="none")
        adv = pseudo_advantages(np.array([[2.5]]), cfg)
        assert adv[0, 0] == pytest.approx(2.5)

    def test_geometric_to_go(self):
        cfg = TransitionLossConfig(baseline="none", adv_discount=0.5)
        adv = pseudo_advantages(np.array([[1.0, 0.0, 0.0]]), cfg)
        assert np.allclose(adv, [[1.0, 0.0, 0.0]])

    def test_default_discount_from_horizon(self):
        cfg = TransitionLossConfig(baseline="none")
        adv = pseudo_advantages(np.array([[0.0, 0.0, 0.0, 1.0]]), cfg)
        beta = 1.0 - 1.0 / 4.0
        assert adv[0, 0] == pytest.approx(beta**3)


class TestPpoLoss:
    def test_identical_models_give_mean_advantage(self):
        rng = np.random.default_rng(6)
        model = _model(rng)
        s = rng.normal(size=(8, 2))
        a = rng.normal(size=(8, 1))
        sp = rng.normal(size=(8, 2)) * 0.1 + s
        adv = rng.normal(size=8)
        loss, skipped = transition_ppo_loss(model, model.snapshot(), (s, a, sp), adv, 0.2)
        assert skipped == 0
        assert loss == pytest.approx(float(adv.mean()))

    def test_clip_unit_cases(self):
        # r = 1.3, eps = 0.2, A = 1 -> 1.2 ; r = 0.5, A = -1 -> -0.8.
        assert min(1.3 * 1.0, np.clip(1.3, 0.8, 1.2) * 1.0) == pytest.approx(1.2)
        assert min(0.5 * -1.0, np.clip(0.5, 0.8, 1.2) * -1.0) == pytest.approx(-0.8)

    def test_surrogate_gradient_matches_unclipped_at_snapshot(self):
        # At model == model_old the clipped surrogate's gradient equals the
        # plain policy-gradient, checked against finite differences.
        rng = np.random.default_rng(7)
        model = _model(rng)
        old = model.snapshot()
        s = rng.normal(size=(16, 2))
        a = rng.normal(size=(16, 1))
        sp = s + rng.normal(size=(16, 2)) * 0.3
        adv = rng.normal(size=16)
        cfg = TransitionLossConfig(eta=0.0, clip_eps=0.2)

        logp = model.log_prob(s, a, sp)
        coef = np.full(16, 1.0 / 16) * adv  # d/dlogp of mean(r * adv) at r = 1
        grads = model.approx.weighted_objective_grads(
            model._inputs(s, a), model.diff_targets(s, sp), coef
        )
        arrays = model.parameter_arrays()
        h = 1e-6
        for arr, g in zip(arrays, grads):
            flat_idx = np.unravel_index(np.argmax(np.abs(g)), g.shape)
            old_val = arr[flat_idx]
            arr[flat_idx] = old_val + h
            up, _ = transition_ppo_loss(model, old, (s, a, sp), adv, 0.2)
            arr[flat_idx] = old_val - h
            dn, _ = transition_ppo_loss(model, old, (s, a, sp), adv, 0.2)
            arr[flat_idx] = old_val
            fd = (up - dn) / (2 * h)
            assert abs(fd - g[flat_idx]) < 1e-5


class TestTotalLoss:
    def test_eta_zero_is_negative_ppo(self):
        rng = np.random.default_rng(8)
        model = _model(rng)
        old = model.snapshot()
        s = rng.normal(size=(8, 2))
        a = rng.normal(size=(8, 1))
        sp = s + rng.normal(size=(8, 2)) * 0.2
        adv = rng.normal(size=8)
        cfg = TransitionLossConfig(eta=0.0)
        parts = total_transition_loss(model, old, (s, a, sp), adv, (s, a, sp), cfg)
        assert parts["total"] == pytest.approx(-parts["ppo"])

    def test_arithmetic_with_table_defaults(self):
        # total = -ppo + eta * l2 with eta = 10: ppo = 0, l2 = 0.3 -> 3.0.
        assert -0.0 + 10.0 * 0.3 == pytest.approx(3.0)

    def test_supervised_regression_drives_l2_to_zero(self):
        # Deterministic linear dynamics: s' = s + 0.1 * a (broadcast), learnable
        # exactly; eta-only training must reach a tiny l2.
        rng = np.random.default_rng(9)
        model = _model(rng)
        cfg = TransitionLossConfig(eta=1.0, adversarial_weight=0.0)
        opt = Adam(3e-3)
        s = rng.uniform(-1, 1, size=(256, 2))
        a = rng.uniform(-1, 1, size=(256, 1))
        sp = s + 0.1 * a
        model.normalizer.update(s)
        for _ in range(500):
            transition_update_step(model, None, None, None, (s, a, sp), cfg, opt)
        assert l2_loss(model, s, a, sp) < 1e-3

    def test_invalid_config_rejected(self):
        with pytest.raises(InvalidParameter):
            TransitionLossConfig(eta=-1.0)
        with pytest.raises(InvalidParameter):
            TransitionLossConfig(clip_eps=1.5)
        with pytest.raises(InvalidParameter):
            TransitionLossConfig(baseline="learned")


class TestUpdateStep:
    def test_zero_adversarial_weight_matches_pure_supervised(self):
        rng = np.random.default_rng(10)
        model_a = _model(np.random.default_rng(42))
        model_b = _model(np.random.default_rng(42))
        s = rng.normal(size=(32, 2))
        a = rng.normal(size=(32, 1))
        sp = s + rng.normal(size=(32, 2)) * 0.1
        adv = rng.normal(size=32)
        cfg_mixed = TransitionLossConfig(eta=5.0, adversarial_weight=0.0)
        cfg_plain = TransitionLossConfig(eta=5.0, adversarial_weight=0.0)
        opt_a, opt_b = Adam(1e-3), Adam(1e-3)
        for _ in range(10):
            transition_update_step(model_a, model_a.snapshot(), (s, a, sp), adv, (s, a, sp), cfg_mixed, opt_a)
            transition_update_step(model_b, None, None, None, (s, a, sp), cfg_plain, opt_b)
        for pa, pb in zip(model_a.parameter_arrays(), model_b.parameter_arrays()):
            assert np.array_equal(pa, pb)

    def test_log_std_untouched_by_l2_term(self):
        rng = np.random.default_rng(11)
        model = _model(rng)
        before = model.approx.log_std.copy()
        cfg = TransitionLossConfig(eta=3.0, adversarial_weight=0.0)
        opt = Adam(1e-2)
        s = rng.normal(size=(16, 2))
        a = rng.normal(size=(16, 1))
        transition_update_step(model, None, None, None, (s, a, s + 0.1), cfg, opt)
        assert np.array_equal(model.approx.log_std, before)
