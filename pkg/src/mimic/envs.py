"""Desk-scale environments with known ground-truth transitions.

Two families: finite :class:`TabularMDP` instances (the substrate for exact
verification) and small deterministic continuous-control tasks (pendulum
swing-up, cartpole balance, a one-state bandit) for end-to-end learning runs.
Continuous dynamics are deterministic with semi-implicit Euler integration;
stochasticity enters only through reset and the acting policy.  Every
environment publishes its reward Lipschitz constant and, where bounded, the
diameter of its state-action set, so error bounds are computable rather than
assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import EnvSpec
from .exceptions import InvalidInput, InvalidParameter

__all__ = [
    "TabularMDP",
    "make_random_mdp",
    "random_tabular_policy",
    "uniform_tabular_policy",
    "ContinuousEnv",
    "PendulumSwingup",
    "CartpoleBalance",
    "TwoArmBandit",
    "make_env",
    "save_tabular_mdp",
    "load_tabular_mdp",
]


# ---------------------------------------------------------------------------
# Finite MDPs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP with explicit transition tensor, reward table and init dist.

    ``transition[s, a, s']`` is P(s' | s, a); ``reward[s, a]`` the reward;
    ``alpha[s]`` the initial state distribution.
    """

    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    alpha: np.ndarray  # (S,)
    gamma: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=float))
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        T, r, a = self.transition, self.reward, self.alpha
        if T.ndim != 3 or T.shape[0] != T.shape[2] or r.shape != T.shape[:2] or a.shape != (T.shape[0],):
            raise InvalidInput(f"inconsistent tabular shapes: T{T.shape} r{r.shape} alpha{a.shape}")
        if np.any(T < 0.0) or np.any(a < 0.0):
            raise InvalidInput("probabilities must be nonnegative")
        if np.max(np.abs(T.sum(axis=2) - 1.0)) > 1e-12:
            raise InvalidInput("each transition row must sum to 1 within 1e-12")
        if abs(a.sum() - 1.0) > 1e-12:
            raise InvalidInput("alpha must sum to 1 within 1e-12")
        if not (0.0 < self.gamma < 1.0):
            raise InvalidParameter(f"gamma must lie strictly inside (0, 1), got {self.gamma}")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def reset(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_states, p=self.alpha))

    def step(self, state: int, action: int, rng: np.random.Generator) -> tuple[int, float, bool]:
        """Exact sampler of the stored transition row; tabular episodes never
        terminate on their own (horizons are handled by the caller)."""
        if not (0 <= state < self.n_states and 0 <= action < self.n_actions):
            raise InvalidInput(f"state/action out of range: ({state}, {action})")
        nxt = int(rng.choice(self.n_states, p=self.transition[state, action]))
        return nxt, float(self.reward[state, action]), False


def make_random_mdp(
    n_states: int,
    n_actions: int,
    rng: np.random.Generator,
    smoothing: float = 0.0,
    gamma: float = 0.95,
) -> TabularMDP:
    """Random test instance: Dirichlet(1 + smoothing) rows, U[0, 1] rewards.

    Larger ``smoothing`` concentrates every row toward the uniform
    distribution (exactly uniform in the limit).
    """
    if n_states < 1 or n_actions < 1:
        raise InvalidParameter("need at least one state and one action")
    if smoothing < 0.0:
        raise InvalidParameter("smoothing must be nonnegative")
    conc = np.full(n_states, 1.0 + smoothing)
    T = rng.dirichlet(conc, size=(n_states, n_actions))
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    alpha = rng.dirichlet(np.ones(n_states))
    return TabularMDP(T, reward, alpha, gamma)


def random_tabular_policy(n_states: int, n_actions: int, rng: np.random.Generator) -> np.ndarray:
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def uniform_tabular_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


def save_tabular_mdp(path: str, mdp: TabularMDP) -> None:
    """Structured text: dims header, then alpha, reward rows, transition rows."""
    lines = [f"tabular-mdp v1 states={mdp.n_states} actions={mdp.n_actions} gamma={mdp.gamma!r}"]
    lines.append(" ".join(repr(float(x)) for x in mdp.alpha))
    for s in range(mdp.n_states):
        lines.append(" ".join(repr(float(x)) for x in mdp.reward[s]))
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            lines.append(" ".join(repr(float(x)) for x in mdp.transition[s, a]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_tabular_mdp(path: str) -> TabularMDP:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("tabular-mdp v1"):
        raise InvalidInput(f"{path} is not a tabular MDP file")
    head = dict(kv.split("=") for kv in lines[0].split()[2:])
    S, A, gamma = int(head["states"]), int(head["actions"]), float(head["gamma"])
    vals = [np.array([float(x) for x in ln.split()]) for ln in lines[1:]]
    if len(vals) != 1 + S + S * A:
        raise InvalidInput("tabular MDP file has the wrong number of rows")
    alpha = vals[0]
    reward = np.stack(vals[1 : 1 + S])
    T = np.stack(vals[1 + S :]).reshape(S, A, S)
    return TabularMDP(T, reward, alpha, gamma)


# ---------------------------------------------------------------------------
# Continuous environments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuousEnv:
    """Base for deterministic continuous-control tasks.

    Subclasses define ``reset``, ``_dynamics`` (pure next-state map),
    ``reward_fn`` and ``terminal_fn``; ``step`` composes them.  Reward and
    termination rules are treated as known environment properties, so they can
    be evaluated on model-generated states during offline policy optimization.
    """

    max_episode_length: int = 200

    @property
    def spec(self) -> EnvSpec:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def action_low(self) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def action_high(self) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def clip_action(self, action: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(action, dtype=float), self.action_low, self.action_high)

    def reset(self, rng: np.random.Generator) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def _dynamics(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def reward_fn(self, state: np.ndarray, action: np.ndarray) -> float:  # pragma: no cover
        raise NotImplementedError

    def terminal_fn(self, state: np.ndarray) -> bool:
        return False

    def reward_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Vectorized reward; the base implementation loops over rows."""
        return np.array([self.reward_fn(s, a) for s, a in zip(states, actions)])

    def terminal_batch(self, states: np.ndarray) -> np.ndarray:
        return np.array([self.terminal_fn(s) for s in states], dtype=bool)

    def clip_state(self, states: np.ndarray) -> np.ndarray:
        """Project states onto the physically reachable envelope.

        Learned-model rollouts can drift outside the reachable set; clamping
        to the declared envelope (a known environment property, like action
        bounds) keeps synthetic rewards and inputs finite and meaningful.
        """
        return states

    def step(
        self, state: np.ndarray, action: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, float, bool]:
        state = np.asarray(state, dtype=float)
        if state.shape != (self.spec.state_dim,):
            raise InvalidInput(f"state must have shape ({self.spec.state_dim},), got {state.shape}")
        action = np.asarray(action, dtype=float)
        if action.shape != (self.spec.action_dim,):
            raise InvalidInput(f"action must have shape ({self.spec.action_dim},), got {action.shape}")
        u = self.clip_action(action)
        nxt = self._dynamics(state, u)
        return nxt, self.reward_fn(state, u), self.terminal_fn(nxt)


def _wrap_angle(theta: float) -> float:
    """Map to [-pi, pi)."""
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class PendulumSwingup(ContinuousEnv):
    """Torque-limited pendulum swing-up; state (cos th, sin th, thdot).

    Reward is -(th^2 + 0.1 thdot^2 + 0.001 u^2) with th wrapped to [-pi, pi).
    A rigid rod pivoting at one end: thdd = 3g/(2l) sin th + 3u/(m l^2).
    """

    mass: float = 1.0
    length: float = 1.0
    gravity: float = 10.0
    timestep: float = 0.05
    torque_limit: float = 2.0
    speed_limit: float = 8.0
    max_episode_length: int = 200
    gamma: float = 0.9

    def __post_init__(self) -> None:
        if self.timestep <= 0 or min(self.mass, self.length, self.gravity) <= 0:
            raise InvalidParameter("physical parameters and timestep must be positive")

    @property
    def spec(self) -> EnvSpec:
        # |dr/d(cos,sin)| <= 2*pi on the unit circle, |dr/dthdot| <= 0.2*speed,
        # |dr/du| <= 0.002*torque.
        lr = math.sqrt((2 * math.pi) ** 2 + (0.2 * self.speed_limit) ** 2 + (0.002 * self.torque_limit) ** 2)
        diam = math.sqrt(2.0**2 + 2.0**2 + (2 * self.speed_limit) ** 2 + (2 * self.torque_limit) ** 2)
        return EnvSpec(3, 1, self.gamma, lr, diam)

    @property
    def action_low(self) -> np.ndarray:
        return np.array([-self.torque_limit])

    @property
    def action_high(self) -> np.ndarray:
        return np.array([self.torque_limit])

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        theta = rng.uniform(-math.pi, math.pi)
        thdot = rng.uniform(-1.0, 1.0)
        return np.array([math.cos(theta), math.sin(theta), thdot])

    def _dynamics(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        theta = math.atan2(state[1], state[0])
        thdot = state[2]
        u = action[0]
        thacc = (3.0 * self.gravity / (2.0 * self.length)) * math.sin(theta) + (
            3.0 / (self.mass * self.length**2)
        ) * u
        thdot = float(np.clip(thdot + self.timestep * thacc, -self.speed_limit, self.speed_limit))
        theta = theta + self.timestep * thdot  # semi-implicit Euler
        return np.array([math.cos(theta), math.sin(theta), thdot])

    def reward_fn(self, state: np.ndarray, action: np.ndarray) -> float:
        theta = _wrap_angle(math.atan2(state[1], state[0]))
        u = float(np.clip(action[0], -self.torque_limit, self.torque_limit))
        return -(theta**2 + 0.1 * state[2] ** 2 + 0.001 * u**2)

    def reward_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        theta = np.arctan2(states[:, 1], states[:, 0])
        u = np.clip(actions[:, 0], -self.torque_limit, self.torque_limit)
        return -(theta**2 + 0.1 * states[:, 2] ** 2 + 0.001 * u**2)

    def terminal_batch(self, states: np.ndarray) -> np.ndarray:
        return np.zeros(len(states), dtype=bool)

    def clip_state(self, states: np.ndarray) -> np.ndarray:
        out = np.empty_like(states)
        out[:, 0] = np.clip(states[:, 0], -1.0, 1.0)
        out[:, 1] = np.clip(states[:, 1], -1.0, 1.0)
        out[:, 2] = np.clip(states[:, 2], -self.speed_limit, self.speed_limit)
        return out

    def mechanical_energy(self, state: np.ndarray) -> float:
        """Kinetic plus potential energy of the rod (zero torque invariant)."""
        inertia = self.mass * self.length**2 / 3.0
        return 0.5 * inertia * state[2] ** 2 + self.mass * self.gravity * (self.length / 2.0) * state[0]


@dataclass(frozen=True)
class CartpoleBalance(ContinuousEnv):
    """Continuous-force cartpole balance; state (x, xdot, th, thdot).

    Reward 1 per step alive; episode ends when the pole or cart leaves the
    permitted box.  The constant reward has Lipschitz constant 0 and the
    velocity coordinates are unbounded, so the diameter is declared infinite.
    """

    cart_mass: float = 1.0
    pole_mass: float = 0.1
    pole_half_length: float = 0.5
    gravity: float = 9.8
    force_limit: float = 10.0
    timestep: float = 0.02
    x_limit: float = 2.4
    angle_limit: float = 12.0 * math.pi / 180.0
    max_episode_length: int = 200
    gamma: float = 0.99

    def __post_init__(self) -> None:
        if self.timestep <= 0 or min(self.cart_mass, self.pole_mass, self.pole_half_length, self.gravity) <= 0:
            raise InvalidParameter("physical parameters and timestep must be positive")

    @property
    def spec(self) -> EnvSpec:
        return EnvSpec(4, 1, self.gamma, 0.0, math.inf)

    @property
    def action_low(self) -> np.ndarray:
        return np.array([-self.force_limit])

    @property
    def action_high(self) -> np.ndarray:
        return np.array([self.force_limit])

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-0.05, 0.05, size=4)

    def _dynamics(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        x, xdot, th, thdot = state
        force = action[0]
        total_mass = self.cart_mass + self.pole_mass
        ml = self.pole_mass * self.pole_half_length
        costh, sinth = math.cos(th), math.sin(th)
        temp = (force + ml * thdot**2 * sinth) / total_mass
        thacc = (self.gravity * sinth - costh * temp) / (
            self.pole_half_length * (4.0 / 3.0 - self.pole_mass * costh**2 / total_mass)
        )
        xacc = temp - ml * thacc * costh / total_mass
        xdot = xdot + self.timestep * xacc
        x = x + self.timestep * xdot
        thdot = thdot + self.timestep * thacc
        th = th + self.timestep * thdot
        return np.array([x, xdot, th, thdot])

    def reward_fn(self, state: np.ndarray, action: np.ndarray) -> float:
        return 1.0

    def terminal_fn(self, state: np.ndarray) -> bool:
        return bool(abs(state[0]) > self.x_limit or abs(state[2]) > self.angle_limit)

    def reward_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.ones(len(states))

    def terminal_batch(self, states: np.ndarray) -> np.ndarray:
        return (np.abs(states[:, 0]) > self.x_limit) | (np.abs(states[:, 2]) > self.angle_limit)

    def clip_state(self, states: np.ndarray) -> np.ndarray:
        # Rollouts terminate just past the permitted box, so a loose envelope
        # suffices to keep model drift finite.
        bound = np.array([2 * self.x_limit, 20.0, 4 * self.angle_limit, 20.0])
        return np.clip(states, -bound, bound)


@dataclass(frozen=True)
class TwoArmBandit(ContinuousEnv):
    """One-state continuous bandit: reward equals the clipped scalar action.

    The optimum is the maximal action; "preferring the better arm" means the
    policy's action distribution puts most of its mass above zero.
    """

    max_episode_length: int = 10
    gamma: float = 0.9

    @property
    def spec(self) -> EnvSpec:
        return EnvSpec(1, 1, self.gamma, 1.0, 2.0)

    @property
    def action_low(self) -> np.ndarray:
        return np.array([-1.0])

    @property
    def action_high(self) -> np.ndarray:
        return np.array([1.0])

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(1)

    def _dynamics(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        return np.zeros(1)

    def reward_fn(self, state: np.ndarray, action: np.ndarray) -> float:
        return float(np.clip(action[0], -1.0, 1.0))

    def reward_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.clip(actions[:, 0], -1.0, 1.0)

    def terminal_batch(self, states: np.ndarray) -> np.ndarray:
        return np.zeros(len(states), dtype=bool)


_ENV_FACTORIES: dict[str, Callable[..., ContinuousEnv]] = {
    "pendulum": PendulumSwingup,
    "cartpole": CartpoleBalance,
    "bandit": TwoArmBandit,
}


def make_env(name: str, **params) -> ContinuousEnv:
    if name not in _ENV_FACTORIES:
        raise InvalidParameter(f"unknown environment {name!r}; available: {sorted(_ENV_FACTORIES)}")
    return _ENV_FACTORIES[name](**params)
