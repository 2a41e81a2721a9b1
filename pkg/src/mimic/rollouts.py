"""Rollout collection and synthesis for the training orchestrator.

Real-environment collection (with step accounting and normalizer updates),
fixed-horizon synthetic rollouts from the learned model, and the bounded
policy queue that pairs each stored policy snapshot with the real dataset it
collected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TransitionDataset
from .envs import ContinuousEnv
from .exceptions import InvalidParameter, InvalidState
from .policy import GaussianPolicy, PolicySnapshot
from .transition import Normalizer, TransitionModel

__all__ = [
    "StepCounter",
    "PolicyQueue",
    "QueueEntry",
    "SyntheticRollouts",
    "collect_real",
    "synthesize_short_rollouts",
    "evaluate_policy",
]


class StepCounter:
    """Counts real environment steps; the learning-curve x axis."""

    def __init__(self) -> None:
        self.count = 0

    def add(self, n: int = 1) -> None:
        self.count += n


@dataclass(frozen=True)
class QueueEntry:
    snapshot: PolicySnapshot
    dataset: TransitionDataset


class PolicyQueue:
    """Last-q (policy snapshot, real dataset) pairs, oldest evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidParameter("queue capacity must be >= 1")
        self.capacity = capacity
        self._entries: list[QueueEntry] = []

    def push(self, snapshot: PolicySnapshot, dataset: TransitionDataset) -> None:
        self._entries.append(QueueEntry(snapshot, dataset))
        if len(self._entries) > self.capacity:
            self._entries.pop(0)

    def entries(self) -> list[QueueEntry]:
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def sample_real(
        self, n: int, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Real (s, a, s') triples drawn uniformly across stored datasets.

        Each dataset is picked with probability 1/q regardless of its size, so
        the draw follows the equal-weight mixture of the stored empirical
        measures.  Returns (states, actions, next_states, source_index).
        """
        if not self._entries:
            raise InvalidState("policy queue is empty")
        which = rng.integers(0, len(self._entries), size=n)
        states, actions, next_states = [], [], []
        for j, entry in enumerate(self._entries):
            take = int((which == j).sum())
            if take == 0:
                continue
            rows = entry.dataset.sample_rows(take, rng)
            states.append(rows.states)
            actions.append(rows.actions)
            next_states.append(rows.next_states)
        order = np.argsort(which, kind="stable")
        inv = np.empty_like(order)
        inv[order] = np.arange(n)
        return (
            np.concatenate(states)[inv],
            np.concatenate(actions)[inv],
            np.concatenate(next_states)[inv],
            which,
        )


def collect_real(
    env: ContinuousEnv,
    policy: GaussianPolicy,
    n_steps: int,
    rng: np.random.Generator,
    normalizer: Normalizer | None = None,
    queue: PolicyQueue | None = None,
    counter: StepCounter | None = None,
) -> TransitionDataset:
    """Collect exactly ``n_steps`` transition tuples from the real environment.

    Episodes reset on termination or at the env's episode length cap.  After
    collection the normalizer is folded over the visited states and the acting
    policy is snapshotted into the queue alongside its dataset.
    """
    if n_steps < 1:
        raise InvalidParameter("n_steps must be >= 1")
    states, actions, rewards, next_states, terminals, starts = [], [], [], [], [], []
    state = env.reset(rng)
    ep_len = 0
    starts.append(0)
    for k in range(n_steps):
        action = policy.act(state, rng)
        nxt, reward, terminal = env.step(state, action, rng)
        if counter is not None:
            counter.add()
        states.append(state)
        actions.append(action)
        rewards.append(reward)
        next_states.append(nxt)
        terminals.append(terminal)
        ep_len += 1
        if terminal or ep_len >= env.max_episode_length:
            state = env.reset(rng)
            ep_len = 0
            if k + 1 < n_steps:
                starts.append(k + 1)
        else:
            state = nxt
    dataset = TransitionDataset(
        states=np.stack(states),
        actions=np.stack(actions),
        rewards=np.array(rewards, dtype=float),
        next_states=np.stack(next_states),
        terminals=np.array(terminals, dtype=bool),
        episode_starts=np.array(starts, dtype=int),
    )
    if normalizer is not None:
        normalizer.update(dataset.states)
    if queue is not None:
        queue.push(policy.snapshot(), dataset)
    return dataset


@dataclass
class SyntheticRollouts:
    """Fixed-horizon model rollouts as (rollout, step, ...) arrays.

    ``actions`` are the executed (clipped) actions fed to the model;
    ``actions_raw`` the pre-clip policy samples used for likelihood ratios.
    ``active`` masks steps after an early termination; such rollouts stay
    frozen at their last state.
    """

    states: np.ndarray  # (K, H, ds)
    actions: np.ndarray  # (K, H, da)
    actions_raw: np.ndarray  # (K, H, da)
    next_states: np.ndarray  # (K, H, ds)
    rewards: np.ndarray  # (K, H)
    logp_model: np.ndarray | None  # (K, H) when sampled from the model
    active: np.ndarray  # (K, H) bool

    def flat_triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = self.active.reshape(-1)
        ds, da = self.states.shape[-1], self.actions.shape[-1]
        return (
            self.states.reshape(-1, ds)[m],
            self.actions.reshape(-1, da)[m],
            self.next_states.reshape(-1, ds)[m],
        )


def synthesize_short_rollouts(
    model: TransitionModel,
    policy,
    dataset: TransitionDataset,
    horizon: int,
    count: int,
    rng: np.random.Generator,
    mode: str = "sample",
    env: ContinuousEnv | None = None,
) -> SyntheticRollouts:
    """Roll the model for ``horizon`` steps from real-data states.

    Initial states are drawn uniformly from the dataset's state rows.  In
    ``mode="sample"`` next states are Gaussian draws from the model (used for
    critic fake triples, with their model log-probs recorded); in
    ``mode="mean"`` the deterministic mean prediction is used (policy
    training).  When ``env`` is given, its known reward function is evaluated
    on the synthetic states and its termination rule freezes finished
    rollouts.
    """
    if mode not in ("sample", "mean"):
        raise InvalidParameter(f"unknown rollout mode {mode!r}")
    if len(dataset) == 0:
        raise InvalidState("cannot synthesize rollouts from an empty dataset")
    if horizon < 1 or count < 1:
        raise InvalidParameter("horizon and count must be >= 1")

    ds, da = dataset.states.shape[1], dataset.actions.shape[1]
    idx = rng.integers(0, len(dataset), size=count)
    cur = dataset.states[idx].copy()

    states = np.zeros((count, horizon, ds))
    actions = np.zeros((count, horizon, da))
    actions_raw = np.zeros((count, horizon, da))
    next_states = np.zeros((count, horizon, ds))
    rewards = np.zeros((count, horizon))
    logp = np.zeros((count, horizon)) if mode == "sample" else None
    active = np.zeros((count, horizon), dtype=bool)

    alive = np.ones(count, dtype=bool)
    for t in range(horizon):
        executed, raw = policy.act_batch(cur, rng)
        if mode == "sample":
            nxt, lp = model.sample_next_state(cur, executed, rng)
            logp[:, t] = lp
        else:
            nxt = model.predict_next_state_mean(cur, executed)
        if env is not None:
            nxt = env.clip_state(nxt)
        states[:, t] = cur
        actions[:, t] = executed
        actions_raw[:, t] = raw
        next_states[:, t] = nxt
        active[:, t] = alive
        if env is not None:
            rewards[:, t] = env.reward_batch(cur, executed)
            alive = alive & ~env.terminal_batch(nxt)
        cur = np.where(alive[:, None], nxt, cur)
    return SyntheticRollouts(states, actions, actions_raw, next_states, rewards, logp, active)


def evaluate_policy(
    env: ContinuousEnv, policy, episodes: int, rng: np.random.Generator
) -> tuple[float, float]:
    """Mean and std of undiscounted return over deterministic-mode episodes."""
    returns = []
    for _ in range(episodes):
        state = env.reset(rng)
        total = 0.0
        for _ in range(env.max_episode_length):
            action = policy.act(state, rng, deterministic=True)
            state, reward, terminal = env.step(state, action, rng)
            total += reward
            if terminal:
                break
        returns.append(total)
    r = np.array(returns)
    return float(r.mean()), float(r.std())
