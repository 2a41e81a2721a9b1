"""Tests for the tabular and continuous environments."""

import math

import numpy as np
import pytest
from scipy import stats

from mimic.envs import (
    CartpoleBalance,
    PendulumSwingup,
    TabularMDP,
    TwoArmBandit,
    load_tabular_mdp,
    make_env,
    make_random_mdp,
    random_tabular_policy,
    save_tabular_mdp,
)
from mimic.exceptions import InvalidInput, InvalidParameter


class TestTabularMDP:
    def test_invariants_enforced(self):
        T = np.ones((2, 1, 2)) * 0.5
        with pytest.raises(InvalidInput):
            TabularMDP(T, np.zeros((2, 1)), np.array([0.6, 0.5]), 0.9)  # alpha sum
        bad_T = T.copy()
        bad_T[0, 0] = [0.6, 0.6]
        with pytest.raises(InvalidInput):
            TabularMDP(bad_T, np.zeros((2, 1)), np.array([0.5, 0.5]), 0.9)

    def test_point_mass_reset(self):
        mdp = TabularMDP(np.ones((2, 1, 2)) * 0.5, np.zeros((2, 1)), np.array([1.0, 0.0]), 0.9)
        rng = np.random.default_rng(0)
        assert all(mdp.reset(rng) == 0 for _ in range(50))

    def test_step_frequencies_match_row(self):
        # Monte-Carlo oracle: empirical next-state frequencies from the stored
        # transition row at a fixed (s, a).
        rng = np.random.default_rng(1)
        mdp = make_random_mdp(5, 2, rng, gamma=0.9)
        draws = np.array([mdp.step(2, 1, rng)[0] for _ in range(10**5)])
        freq = np.bincount(draws, minlength=5) / len(draws)
        tv = 0.5 * np.abs(freq - mdp.transition[2, 1]).sum()
        assert tv < 0.01

    def test_step_chi_square_goodness_of_fit(self):
        rng = np.random.default_rng(2)
        mdp = make_random_mdp(4, 2, rng, smoothing=1.0, gamma=0.9)
        draws = np.array([mdp.step(1, 0, rng)[0] for _ in range(10**5)])
        counts = np.bincount(draws, minlength=4)
        _, pval = stats.chisquare(counts, f_exp=mdp.transition[1, 0] * len(draws))
        assert pval > 0.01

    def test_step_rejects_out_of_range(self):
        mdp = make_random_mdp(3, 2, np.random.default_rng(0))
        with pytest.raises(InvalidInput):
            mdp.step(3, 0, np.random.default_rng(0))


class TestMakeRandomMdp:
    def test_single_state_action_forced_row(self):
        mdp = make_random_mdp(1, 1, np.random.default_rng(0))
        assert np.array_equal(mdp.transition, np.ones((1, 1, 1)))

    def test_rows_sum_to_one(self):
        mdp = make_random_mdp(5, 2, np.random.default_rng(3))
        assert np.max(np.abs(mdp.transition.sum(axis=2) - 1.0)) <= 1e-12

    def test_large_smoothing_approaches_uniform(self):
        mdp = make_random_mdp(5, 2, np.random.default_rng(4), smoothing=1e4)
        assert np.max(np.abs(mdp.transition - 0.2)) < 0.01

    def test_invalid_sizes(self):
        with pytest.raises(InvalidParameter):
            make_random_mdp(0, 1, np.random.default_rng(0))


class TestPendulum:
    def test_reset_mean_angle_near_zero(self):
        env = PendulumSwingup()
        rng = np.random.default_rng(5)
        angles = [math.atan2(s[1], s[0]) for s in (env.reset(rng) for _ in range(10**5))]
        assert abs(np.mean(angles)) < 0.02

    def test_hanging_rest_state_is_fixed_point(self):
        env = PendulumSwingup()
        rng = np.random.default_rng(0)
        state = np.array([-1.0, 0.0, 0.0])  # hanging down, at rest
        for _ in range(100):
            nxt, _, term = env.step(state, np.zeros(1), rng)
            assert not term
            assert np.allclose(nxt, state, atol=1e-12)
            state = nxt

    def test_zero_torque_energy_drift(self):
        # Energy oracle from the dynamics parameters: with zero torque the
        # symplectic integrator keeps long-run drift per step below 1e-4.
        env = PendulumSwingup()
        rng = np.random.default_rng(6)
        state = np.array([math.cos(2.5), math.sin(2.5), 0.5])
        e0 = env.mechanical_energy(state)
        n = 10**4
        for _ in range(n):
            state, _, _ = env.step(state, np.zeros(1), rng)
        assert abs(env.mechanical_energy(state) - e0) / n < 1e-4

    def test_reward_at_upright_is_maximal(self):
        env = PendulumSwingup()
        up = env.reward_fn(np.array([1.0, 0.0, 0.0]), np.zeros(1))
        down = env.reward_fn(np.array([-1.0, 0.0, 0.0]), np.zeros(1))
        assert up == 0.0 and down < -9.0

    def test_action_clipped_to_torque_limit(self):
        env = PendulumSwingup()
        rng = np.random.default_rng(0)
        a, _, _ = env.step(np.array([1.0, 0.0, 0.0]), np.array([100.0]), rng)
        b, _, _ = env.step(np.array([1.0, 0.0, 0.0]), np.array([env.torque_limit]), rng)
        assert np.allclose(a, b)

    def test_dimension_mismatch_rejected(self):
        env = PendulumSwingup()
        with pytest.raises(InvalidInput):
            env.step(np.zeros(2), np.zeros(1), np.random.default_rng(0))
        with pytest.raises(InvalidInput):
            env.step(np.zeros(3), np.zeros(2), np.random.default_rng(0))

    def test_spec_constants_finite(self):
        spec = PendulumSwingup().spec
        assert spec.reward_lipschitz > 0.0 and math.isfinite(spec.reward_lipschitz)
        assert math.isfinite(spec.state_space_diameter)


class TestCartpole:
    def test_reset_within_init_box(self):
        env = CartpoleBalance()
        rng = np.random.default_rng(7)
        for _ in range(10**4):
            s = env.reset(rng)
            assert np.all(np.abs(s) <= 0.05)

    def test_terminal_on_angle_and_position(self):
        env = CartpoleBalance()
        assert env.terminal_fn(np.array([0.0, 0.0, 0.3, 0.0]))
        assert env.terminal_fn(np.array([2.5, 0.0, 0.0, 0.0]))
        assert not env.terminal_fn(np.zeros(4))

    def test_reward_is_constant_one(self):
        env = CartpoleBalance()
        rng = np.random.default_rng(8)
        _, r, _ = env.step(env.reset(rng), np.array([3.0]), rng)
        assert r == 1.0

    def test_pole_falls_without_control(self):
        env = CartpoleBalance()
        rng = np.random.default_rng(9)
        state = np.array([0.0, 0.0, 0.02, 0.0])
        fell = False
        for _ in range(500):
            state, _, term = env.step(state, np.zeros(1), rng)
            if term:
                fell = True
                break
        assert fell


class TestBandit:
    def test_reward_is_clipped_action(self):
        env = TwoArmBandit()
        rng = np.random.default_rng(0)
        s = env.reset(rng)
        _, r, _ = env.step(s, np.array([0.7]), rng)
        assert r == pytest.approx(0.7)
        _, r, _ = env.step(s, np.array([5.0]), rng)
        assert r == 1.0

    def test_state_is_constant(self):
        env = TwoArmBandit()
        rng = np.random.default_rng(0)
        nxt, _, term = env.step(env.reset(rng), np.array([-0.3]), rng)
        assert np.array_equal(nxt, np.zeros(1))
        assert not term


class TestRegistryAndSerialization:
    def test_make_env_dispatch(self):
        assert isinstance(make_env("pendulum"), PendulumSwingup)
        assert isinstance(make_env("cartpole", x_limit=1.0), CartpoleBalance)
        with pytest.raises(InvalidParameter):
            make_env("mujoco")

    def test_tabular_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        mdp = make_random_mdp(4, 3, rng, gamma=0.93)
        path = str(tmp_path / "mdp.txt")
        save_tabular_mdp(path, mdp)
        back = load_tabular_mdp(path)
        assert np.array_equal(back.transition, mdp.transition)
        assert np.array_equal(back.reward, mdp.reward)
        assert np.array_equal(back.alpha, mdp.alpha)
        assert back.gamma == mdp.gamma

    def test_random_policy_rows_normalized(self):
        pol = random_tabular_policy(6, 3, np.random.default_rng(11))
        assert np.allclose(pol.sum(axis=1), 1.0)
