"""Foundational MDP types and discounted-measure arithmetic.

Everything downstream trades in the types defined here: environment
descriptors, transition tuples, trajectories, flat transition datasets, and
normalized discounted occupancy estimates.  All types are immutable after
construction and all operations are pure given an explicit random generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .exceptions import InvalidInput, InvalidParameter

__all__ = [
    "EnvSpec",
    "TransitionTuple",
    "Trajectory",
    "TrajectorySource",
    "TransitionDataset",
    "OccupancyEstimate",
    "sample_horizon",
    "discounted_return",
    "empirical_occupancy",
    "save_trajectories",
    "load_trajectories",
]


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment's spaces and task constants.

    ``reward_lipschitz`` is the Lipschitz constant of the reward over the
    declared state-action metric; ``state_space_diameter`` is the diameter of
    the reachable state-action set (``math.inf`` when unbounded).  Both are
    published so downstream error bounds are computable rather than assumed.
    """

    state_dim: int
    action_dim: int
    gamma: float
    reward_lipschitz: float
    state_space_diameter: float = math.inf

    def __post_init__(self) -> None:
        if self.state_dim < 1 or self.action_dim < 1:
            raise InvalidParameter("state_dim and action_dim must be positive")
        if not (0.0 < self.gamma < 1.0):
            raise InvalidParameter(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        if not (self.reward_lipschitz >= 0.0 and math.isfinite(self.reward_lipschitz)):
            raise InvalidParameter("reward_lipschitz must be finite and nonnegative")
        if not self.state_space_diameter > 0.0:
            raise InvalidParameter("state_space_diameter must be positive (or inf)")


class TrajectorySource(Enum):
    REAL = "real"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class TransitionTuple:
    """One (s, a, r, s') record; the universal data currency."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "state", np.asarray(self.state, dtype=float))
        object.__setattr__(self, "action", np.asarray(self.action, dtype=float))
        object.__setattr__(self, "next_state", np.asarray(self.next_state, dtype=float))
        if self.state.shape != self.next_state.shape:
            raise InvalidInput("state and next_state must have the same shape")
        if not math.isfinite(self.reward):
            raise InvalidInput(f"reward must be finite, got {self.reward}")


@dataclass(frozen=True)
class Trajectory:
    """Ordered transition tuples from a single episode (real or synthetic).

    Consecutive tuples chain: ``tuples[t].next_state == tuples[t + 1].state``
    unless tuple ``t`` is terminal.
    """

    tuples: tuple[TransitionTuple, ...]
    source: TrajectorySource = TrajectorySource.REAL

    def __post_init__(self) -> None:
        object.__setattr__(self, "tuples", tuple(self.tuples))
        for t in range(len(self.tuples) - 1):
            cur, nxt = self.tuples[t], self.tuples[t + 1]
            if not cur.terminal and not np.array_equal(cur.next_state, nxt.state):
                raise InvalidInput(f"trajectory breaks chaining between steps {t} and {t + 1}")

    def __len__(self) -> int:
        return len(self.tuples)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.tuples], dtype=float)

    @property
    def states(self) -> np.ndarray:
        return np.stack([t.state for t in self.tuples]) if self.tuples else np.empty((0,))

    @property
    def actions(self) -> np.ndarray:
        return np.stack([t.action for t in self.tuples]) if self.tuples else np.empty((0,))


@dataclass
class TransitionDataset:
    """Column-major batch of transition tuples (one real-data collection round).

    ``episode_starts`` marks the first row of each episode so trajectories can
    be reconstructed; rows within an episode chain like a :class:`Trajectory`.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    episode_starts: np.ndarray = field(default_factory=lambda: np.array([0], dtype=int))

    def __post_init__(self) -> None:
        n = len(self.states)
        if not (len(self.actions) == len(self.rewards) == len(self.next_states) == len(self.terminals) == n):
            raise InvalidInput("dataset columns must have equal length")

    def __len__(self) -> int:
        return len(self.states)

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory]) -> "TransitionDataset":
        if not trajs or all(len(t) == 0 for t in trajs):
            raise InvalidInput("cannot build a dataset from empty trajectories")
        starts, cursor = [], 0
        for t in trajs:
            if len(t) == 0:
                continue
            starts.append(cursor)
            cursor += len(t)
        tuples = [tt for t in trajs for tt in t.tuples]
        return cls(
            states=np.stack([t.state for t in tuples]),
            actions=np.stack([t.action for t in tuples]),
            rewards=np.array([t.reward for t in tuples], dtype=float),
            next_states=np.stack([t.next_state for t in tuples]),
            terminals=np.array([t.terminal for t in tuples], dtype=bool),
            episode_starts=np.array(starts, dtype=int),
        )

    def to_trajectories(self, source: TrajectorySource = TrajectorySource.REAL) -> list[Trajectory]:
        bounds = list(self.episode_starts) + [len(self)]
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            tuples = [
                TransitionTuple(self.states[i], self.actions[i], float(self.rewards[i]),
                                self.next_states[i], bool(self.terminals[i]))
                for i in range(lo, hi)
            ]
            out.append(Trajectory(tuple(tuples), source))
        return out

    def sample_rows(self, n: int, rng: np.random.Generator) -> "TransitionDataset":
        idx = rng.integers(0, len(self), size=n)
        return TransitionDataset(
            states=self.states[idx], actions=self.actions[idx], rewards=self.rewards[idx],
            next_states=self.next_states[idx], terminals=self.terminals[idx],
            episode_starts=np.array([0], dtype=int),
        )


@dataclass(frozen=True)
class OccupancyEstimate:
    """Weighted point cloud over (s, a) or (s, a, s') with weights summing to 1."""

    points: np.ndarray  # (n, d) rows; each row a concatenated support point
    weights: np.ndarray  # (n,)

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if len(self.points) != len(self.weights):
            raise InvalidInput("points and weights must align")
        if np.any(self.weights < 0.0):
            raise InvalidInput("occupancy weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise InvalidInput(f"occupancy weights must sum to 1, got {self.weights.sum()!r}")

    def collapse_duplicates(self) -> "OccupancyEstimate":
        """Merge identical support rows, summing their weights."""
        uniq, inverse = np.unique(self.points, axis=0, return_inverse=True)
        w = np.zeros(len(uniq))
        np.add.at(w, inverse, self.weights)
        return OccupancyEstimate(uniq, w / w.sum())

    def expectation(self, values: np.ndarray) -> float:
        """Weighted mean of per-point values aligned with ``points``."""
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))


def sample_horizon(gamma: float, rng: np.random.Generator) -> int:
    """Draw a trajectory length H >= 1 with P(H = k) = (1 - gamma) * gamma**(k-1)."""
    if not (0.0 < gamma < 1.0):
        raise InvalidParameter(f"gamma must lie strictly inside (0, 1), got {gamma}")
    return int(rng.geometric(1.0 - gamma))


def discounted_return(traj: Trajectory, gamma: float) -> float:
    """Sum of gamma**t * r_t over the trajectory."""
    if len(traj) == 0:
        raise InvalidInput("cannot compute the return of an empty trajectory")
    rewards = traj.rewards
    return float(np.dot(gamma ** np.arange(len(rewards)), rewards))


def empirical_occupancy(
    trajs: Sequence[Trajectory],
    gamma: float,
    weighting: str = "discounted",
    include_next_state: bool = False,
) -> OccupancyEstimate:
    """Build the normalized discounted occupancy estimate from trajectories.

    ``weighting="discounted"`` weights the step-t visit of each trajectory by
    (1 - gamma) * gamma**t and renormalizes across the whole batch; use it on
    fixed-length or naturally terminated episodes.  ``weighting="uniform"``
    assigns equal weight to every recorded step; use it when the trajectory
    lengths were themselves drawn via :func:`sample_horizon`, which realizes
    the geometric weighting through the stopping time.  Trajectories that end
    early (terminal before the horizon) simply contribute fewer points; the
    residual discounted mass is renormalized away.
    """
    if weighting not in ("discounted", "uniform"):
        raise InvalidParameter(f"unknown weighting {weighting!r}")
    nonempty = [t for t in trajs if len(t) > 0]
    if not nonempty:
        raise InvalidInput("need at least one non-empty trajectory")

    rows, weights = [], []
    for traj in nonempty:
        for t, tup in enumerate(traj.tuples):
            parts = [tup.state, tup.action] + ([tup.next_state] if include_next_state else [])
            rows.append(np.concatenate(parts))
            weights.append((1.0 - gamma) * gamma**t if weighting == "discounted" else 1.0)
    w = np.asarray(weights, dtype=float)
    return OccupancyEstimate(np.stack(rows), w / w.sum())


# ---------------------------------------------------------------------------
# Trajectory batch serialization: line-delimited decimal text.
# ---------------------------------------------------------------------------

_HEADER = "# trajectory-batch v1 state_dim={sd} action_dim={ad}"
_TRAJ_MARK = "# traj source={src}"


def save_trajectories(path: str, trajs: Sequence[Trajectory], spec: EnvSpec) -> None:
    """Write a trajectory batch: one tuple per line, fields in order
    (state..., action..., reward, next_state..., terminal)."""
    lines = [_HEADER.format(sd=spec.state_dim, ad=spec.action_dim)]
    for traj in trajs:
        lines.append(_TRAJ_MARK.format(src=traj.source.value))
        for tup in traj.tuples:
            if len(tup.state) != spec.state_dim or len(tup.action) != spec.action_dim:
                raise InvalidInput("tuple dimensions do not match the declared spec")
            fields = (
                [repr(float(x)) for x in tup.state]
                + [repr(float(x)) for x in tup.action]
                + [repr(float(tup.reward))]
                + [repr(float(x)) for x in tup.next_state]
                + ["1" if tup.terminal else "0"]
            )
            lines.append(" ".join(fields))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_trajectories(path: str) -> list[Trajectory]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("# trajectory-batch v1"):
        raise InvalidInput(f"{path} is not a trajectory batch file")
    head = dict(kv.split("=") for kv in lines[0].split()[3:])
    sd, ad = int(head["state_dim"]), int(head["action_dim"])

    out: list[Trajectory] = []
    cur: list[TransitionTuple] = []
    cur_src = TrajectorySource.REAL

    def flush() -> None:
        if cur:
            out.append(Trajectory(tuple(cur), cur_src))

    for ln in lines[1:]:
        if ln.startswith("# traj"):
            flush()
            cur = []
            cur_src = TrajectorySource(ln.split("source=")[1].strip())
            continue
        vals = ln.split()
        if len(vals) != 2 * sd + ad + 2:
            raise InvalidInput(f"malformed tuple line (expected {2 * sd + ad + 2} fields): {ln!r}")
        nums = [float(v) for v in vals[:-1]]
        cur.append(
            TransitionTuple(
                state=np.array(nums[:sd]),
                action=np.array(nums[sd : sd + ad]),
                reward=nums[sd + ad],
                next_state=np.array(nums[sd + ad + 1 : 2 * sd + ad + 1]),
                terminal=vals[-1] == "1",
            )
        )
    flush()
    return out
