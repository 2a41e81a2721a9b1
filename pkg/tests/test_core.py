"""Tests for the foundational MDP types and discounted-measure arithmetic."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimic.core import (
    EnvSpec,
    OccupancyEstimate,
    Trajectory,
    TrajectorySource,
    TransitionDataset,
    TransitionTuple,
    discounted_return,
    empirical_occupancy,
    load_trajectories,
    sample_horizon,
    save_trajectories,
)
from mimic.exceptions import InvalidInput, InvalidParameter


def _traj(rewards, state_dim=2, source=TrajectorySource.REAL, rng=None):
    """Chained trajectory with the given rewards and arbitrary states."""
    rng = rng or np.random.default_rng(0)
    states = rng.standard_normal((len(rewards) + 1, state_dim))
    tuples = [
        TransitionTuple(states[i], rng.standard_normal(1), float(r), states[i + 1])
        for i, r in enumerate(rewards)
    ]
    return Trajectory(tuple(tuples), source)


class TestEnvSpec:
    def test_rejects_gamma_outside_unit_interval(self):
        with pytest.raises(InvalidParameter):
            EnvSpec(1, 1, 1.0, 0.0)
        with pytest.raises(InvalidParameter):
            EnvSpec(1, 1, 0.0, 0.0)

    def test_rejects_infinite_lipschitz(self):
        with pytest.raises(InvalidParameter):
            EnvSpec(1, 1, 0.9, math.inf)

    def test_unbounded_diameter_allowed(self):
        spec = EnvSpec(2, 1, 0.9, 1.0, math.inf)
        assert spec.state_space_diameter == math.inf


class TestTrajectory:
    def test_chaining_enforced(self):
        a = TransitionTuple(np.zeros(2), np.zeros(1), 0.0, np.ones(2))
        b = TransitionTuple(np.full(2, 2.0), np.zeros(1), 0.0, np.zeros(2))
        with pytest.raises(InvalidInput):
            Trajectory((a, b))

    def test_terminal_breaks_chaining_requirement(self):
        a = TransitionTuple(np.zeros(2), np.zeros(1), 0.0, np.ones(2), terminal=True)
        b = TransitionTuple(np.full(2, 2.0), np.zeros(1), 0.0, np.zeros(2))
        assert len(Trajectory((a, b))) == 2

    def test_nonfinite_reward_rejected(self):
        with pytest.raises(InvalidInput):
            TransitionTuple(np.zeros(2), np.zeros(1), math.nan, np.zeros(2))


class TestSampleHorizon:
    def test_gamma_near_zero_is_always_one(self):
        rng = np.random.default_rng(1)
        draws = [sample_horizon(1e-12, rng) for _ in range(1000)]
        assert all(h == 1 for h in draws)

    def test_mean_matches_geometric_expectation(self):
        rng = np.random.default_rng(2)
        gamma = 0.99
        draws = rng.geometric(1.0 - gamma, size=10**6)  # same law as sample_horizon
        single = sample_horizon(gamma, np.random.default_rng(3))
        assert single >= 1
        mean = draws.mean()
        assert abs(mean - 100.0) / 100.0 < 0.01

    def test_pmf_head_against_closed_form(self):
        # Monte-Carlo check of P(H = 1) = 1 - gamma at gamma = 0.5.
        rng = np.random.default_rng(4)
        draws = np.array([sample_horizon(0.5, rng) for _ in range(10**5)])
        assert abs((draws == 1).mean() - 0.5) < 0.01

    def test_invalid_gamma(self):
        rng = np.random.default_rng(0)
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(InvalidParameter):
                sample_horizon(bad, rng)


class TestDiscountedReturn:
    def test_gamma_zero_keeps_first_reward(self):
        assert discounted_return(_traj([1.0, 1.0, 1.0]), 0.0) == 1.0

    def test_two_step_half_discount(self):
        assert discounted_return(_traj([1.0, 1.0]), 0.5) == 1.5

    def test_matches_left_fold_oracle(self):
        rng = np.random.default_rng(5)
        rewards = rng.standard_normal(20)
        traj = _traj(rewards, rng=rng)
        gamma = 0.9
        # Independent oracle: right-to-left Horner fold of the discounted sum.
        acc = 0.0
        for r in reversed(rewards):
            acc = r + gamma * acc
        assert abs(discounted_return(traj, gamma) - acc) < 1e-12

    def test_empty_trajectory_rejected(self):
        with pytest.raises(InvalidInput):
            discounted_return(Trajectory(()), 0.5)


class TestEmpiricalOccupancy:
    def test_single_step_is_point_mass(self):
        occ = empirical_occupancy([_traj([1.0])], 0.7)
        assert occ.weights.shape == (1,)
        assert occ.weights[0] == 1.0

    def test_two_state_cycle_weights(self):
        # Deterministic cycle s0 -> s1 -> s0 at gamma = 0.5: the discounted
        # weights of s0 form the even geometric series, giving 2/3 vs 1/3.
        s0, s1, act = np.array([0.0]), np.array([1.0]), np.array([0.0])
        tuples = []
        cur, nxt = s0, s1
        for _ in range(60):
            tuples.append(TransitionTuple(cur, act, 0.0, nxt))
            cur, nxt = nxt, cur
        occ = empirical_occupancy([Trajectory(tuple(tuples))], 0.5).collapse_duplicates()
        weights = {tuple(p): w for p, w in zip(occ.points, occ.weights)}
        assert abs(weights[(0.0, 0.0)] - 2.0 / 3.0) < 1e-12
        assert abs(weights[(1.0, 0.0)] - 1.0 / 3.0) < 1e-12

    def test_all_empty_rejected(self):
        with pytest.raises(InvalidInput):
            empirical_occupancy([Trajectory(())], 0.5)

    def test_return_identity_through_occupancy(self):
        # discounted_return == E_rho[r] / (1 - gamma) for a reward that is a
        # function of (s, a), once the trajectory is long enough that the
        # truncated geometric tail is below float precision.
        rng = np.random.default_rng(6)
        gamma = 0.9
        length = 400  # gamma**400 ~ 5e-19
        states = rng.standard_normal((length + 1, 2))
        tuples, rewards = [], []
        for i in range(length):
            r = float(states[i].sum())  # reward as a function of the state
            rewards.append(r)
            tuples.append(TransitionTuple(states[i], np.zeros(1), r, states[i + 1]))
        traj = Trajectory(tuple(tuples))
        occ = empirical_occupancy([traj], gamma)
        reward_per_point = np.array(rewards)
        lhs = discounted_return(traj, gamma)
        rhs = occ.expectation(reward_per_point) / (1.0 - gamma)
        assert abs(lhs - rhs) < 1e-9

    @given(
        lengths=st.lists(st.integers(min_value=1, max_value=12), min_size=1, max_size=5),
        gamma=st.floats(min_value=0.05, max_value=0.95),
    )
    @settings(max_examples=60, deadline=None)
    def test_weights_always_normalized_and_nonnegative(self, lengths, gamma):
        rng = np.random.default_rng(7)
        trajs = [_traj(rng.standard_normal(n), rng=rng) for n in lengths]
        for weighting in ("discounted", "uniform"):
            occ = empirical_occupancy(trajs, gamma, weighting=weighting)
            assert np.all(occ.weights >= 0.0)
            assert abs(occ.weights.sum() - 1.0) < 1e-9

    def test_unknown_weighting_rejected(self):
        with pytest.raises(InvalidParameter):
            empirical_occupancy([_traj([1.0])], 0.5, weighting="bogus")


class TestOccupancyEstimate:
    def test_rejects_unnormalized_weights(self):
        with pytest.raises(InvalidInput):
            OccupancyEstimate(np.zeros((2, 3)), np.array([0.6, 0.6]))

    def test_rejects_negative_weights(self):
        with pytest.raises(InvalidInput):
            OccupancyEstimate(np.zeros((2, 3)), np.array([1.5, -0.5]))

    def test_collapse_duplicates_merges_mass(self):
        pts = np.array([[0.0, 1.0], [0.0, 1.0], [2.0, 3.0]])
        occ = OccupancyEstimate(pts, np.array([0.25, 0.25, 0.5])).collapse_duplicates()
        assert len(occ.weights) == 2
        assert abs(occ.weights.sum() - 1.0) < 1e-12


class TestDataset:
    def test_round_trip_through_trajectories(self):
        rng = np.random.default_rng(8)
        trajs = [_traj(rng.standard_normal(4), rng=rng) for _ in range(3)]
        ds = TransitionDataset.from_trajectories(trajs)
        back = ds.to_trajectories()
        assert len(back) == 3
        for a, b in zip(trajs, back):
            assert np.allclose(a.states, b.states)
            assert np.allclose(a.rewards, b.rewards)

    def test_sample_rows_shapes(self):
        ds = TransitionDataset.from_trajectories([_traj([1.0, 2.0, 3.0])])
        sub = ds.sample_rows(5, np.random.default_rng(0))
        assert len(sub) == 5
        assert sub.states.shape == (5, 2)


class TestSerialization:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        spec = EnvSpec(2, 1, 0.9, 1.0)
        trajs = [
            _traj(rng.standard_normal(3), rng=rng),
            _traj(rng.standard_normal(5), source=TrajectorySource.SYNTHETIC, rng=rng),
        ]
        path = str(tmp_path / "batch.txt")
        save_trajectories(path, trajs, spec)
        back = load_trajectories(path)
        assert len(back) == 2
        assert back[1].source is TrajectorySource.SYNTHETIC
        for a, b in zip(trajs, back):
            assert np.array_equal(a.states, b.states)
            assert np.array_equal(a.actions, b.actions)
            assert np.array_equal(a.rewards, b.rewards)

    def test_rejects_garbage_file(self, tmp_path):
        path = tmp_path / "junk.txt"
        path.write_text("not a batch\n")
        with pytest.raises(InvalidInput):
            load_trajectories(str(path))
