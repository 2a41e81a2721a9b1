"""Stochastic Gaussian policy trained on synthetic rollouts.

One trust-region-approximating update per call: clipped-surrogate ascent with
a mean-KL early stop, an entropy bonus, and a small learned value baseline fit
by regression on synthetic returns.  The policy std is clamped to a fixed band
at sampling time, which supplies exploration during real-data collection
without injected noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidParameter
from .nets import (
    Adam,
    GaussianApproximator,
    clip_grad_norm,
    forward,
    gaussian_log_prob,
    init_mlp,
    kl_between_heads,
    regression_step,
)
from .transition import Normalizer

__all__ = ["PolicyConfig", "GaussianPolicy", "PolicySnapshot", "ValueBaseline", "policy_update"]


@dataclass
class PolicyConfig:
    lr: float = 1e-3
    clip_eps: float = 0.2
    kl_max: float = 0.03
    update_epochs: int = 10
    minibatch_size: int = 512
    entropy_coef: float = 1e-5
    std_min: float = 0.1
    std_max: float = 0.3
    standardize_adv: bool = True
    bootstrap_value: bool = True
    value_lr: float = 1e-3
    value_steps: int = 20
    max_grad_norm: float = 10.0

    def __post_init__(self) -> None:
        if not (0.0 < self.clip_eps < 1.0):
            raise InvalidParameter("clip_eps must lie in (0, 1)")
        if self.kl_max <= 0.0:
            raise InvalidParameter("kl_max must be positive")
        if self.std_min > self.std_max:
            raise InvalidParameter("std_min must not exceed std_max")
        if self.update_epochs < 1 or self.minibatch_size < 1:
            raise InvalidParameter("update_epochs and minibatch_size must be >= 1")


class GaussianPolicy:
    """Gaussian policy over normalized states with clamped std and clipped actions."""

    def __init__(
        self,
        state_dim: int,
        action_low: np.ndarray,
        action_high: np.ndarray,
        normalizer: Normalizer,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (64, 64),
        activation: str = "tanh",
        std_mode: str = "global",
        std_min: float = 0.1,
        std_max: float = 0.3,
    ):
        action_dim = len(action_low)
        out = action_dim if std_mode == "global" else 2 * action_dim
        net = init_mlp([state_dim, *hidden, out], rng, activation, final_scale=0.1)
        self.approx = GaussianApproximator(
            net, action_dim, std_mode, init_log_std=float(np.log(max(std_max, 1e-6))),
            std_min=std_min, std_max=std_max,
        )
        self.state_dim = state_dim
        self.action_low = np.asarray(action_low, dtype=float)
        self.action_high = np.asarray(action_high, dtype=float)
        self.normalizer = normalizer
        self.version = 0

    def _inputs(self, states: np.ndarray) -> np.ndarray:
        return self.normalizer.normalize(np.atleast_2d(np.asarray(states, dtype=float)))

    def act_batch(
        self, states: np.ndarray, rng: np.random.Generator | None, deterministic: bool = False
    ) -> tuple[np.ndarray, np.ndarray]:
        """Returns (executed, raw) actions; executed = raw clipped to bounds."""
        x = self._inputs(states)
        if deterministic:
            raw = np.atleast_2d(self.approx.mean_output(x))
        else:
            raw = np.atleast_2d(self.approx.sample(x, rng))
        return np.clip(raw, self.action_low, self.action_high), raw

    def act(
        self, state: np.ndarray, rng: np.random.Generator | None = None, deterministic: bool = False
    ) -> np.ndarray:
        executed, _ = self.act_batch(np.asarray(state)[None, :], rng, deterministic)
        return executed[0]

    def log_prob(self, states: np.ndarray, raw_actions: np.ndarray) -> np.ndarray:
        return self.approx.log_prob(self._inputs(states), np.atleast_2d(raw_actions))

    def entropy(self, states: np.ndarray) -> np.ndarray:
        return self.approx.entropy(self._inputs(states))

    def kl_from(self, old_approx: GaussianApproximator, states: np.ndarray) -> float:
        """Mean KL(old || current) over the given states."""
        return old_approx.kl_to(self.approx, self._inputs(states))

    def parameter_arrays(self) -> list[np.ndarray]:
        return self.approx.parameter_arrays()

    def snapshot(self) -> "PolicySnapshot":
        return PolicySnapshot(self, self.version)

    def state_dict(self, prefix: str = "policy.") -> dict[str, np.ndarray]:
        from .nets import save_mlp

        out = save_mlp(self.approx.net, prefix)
        if self.approx.log_std is not None:
            out[f"{prefix}log_std"] = self.approx.log_std.copy()
        return out


class PolicySnapshot:
    """Immutable copy of a policy at a version index."""

    def __init__(self, policy: GaussianPolicy, version: int):
        self.approx = policy.approx.copy()
        self.state_dim = policy.state_dim
        self.action_low = policy.action_low.copy()
        self.action_high = policy.action_high.copy()
        self.normalizer = policy.normalizer
        self.version = version

    _inputs = GaussianPolicy._inputs
    act_batch = GaussianPolicy.act_batch
    act = GaussianPolicy.act
    log_prob = GaussianPolicy.log_prob


class ValueBaseline:
    """Small state-value approximator fit by regression on synthetic returns."""

    def __init__(
        self,
        state_dim: int,
        normalizer: Normalizer,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (64, 64),
        activation: str = "tanh",
        lr: float = 1e-3,
    ):
        self.net = init_mlp([state_dim, *hidden, 1], rng, activation)
        self.normalizer = normalizer
        self.optimizer = Adam(lr)

    def predict(self, states: np.ndarray) -> np.ndarray:
        x = self.normalizer.normalize(np.atleast_2d(np.asarray(states, dtype=float)))
        return forward(self.net, x)[:, 0]

    def fit(self, states: np.ndarray, targets: np.ndarray, steps: int) -> float:
        x = self.normalizer.normalize(np.atleast_2d(np.asarray(states, dtype=float)))
        t = np.asarray(targets, dtype=float)
        loss = 0.0
        for _ in range(steps):
            loss = regression_step(self.net, x, t, self.optimizer)
        return loss


def _discounted_returns(
    rewards: np.ndarray, active: np.ndarray, gamma: float, tail_values: np.ndarray | None
) -> np.ndarray:
    """Per-step discounted return-to-go, optionally bootstrapped past the horizon."""
    k, h = rewards.shape
    out = np.zeros_like(rewards)
    acc = np.zeros(k) if tail_values is None else np.asarray(tail_values, dtype=float).copy()
    if tail_values is not None:
        acc = np.where(active[:, -1], acc, 0.0)
    for t in range(h - 1, -1, -1):
        acc = np.where(active[:, t], rewards[:, t] + gamma * acc, 0.0)
        out[:, t] = acc
    return out


def policy_update(
    policy: GaussianPolicy,
    rollouts,
    value: ValueBaseline,
    config: PolicyConfig,
    optimizer: Adam,
    gamma: float,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """One clipped-surrogate policy update with a mean-KL early stop.

    ``rollouts`` are synthetic (model-generated) trajectories carrying raw
    (pre-clip) actions and environment rewards.  The batch is swept in
    shuffled minibatches for up to ``update_epochs`` passes; after each pass
    the mean KL from the pre-update policy is checked and an overshooting pass
    is reverted, so every accepted update respects the trust region.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    active = rollouts.active
    mask = active.reshape(-1)
    states = rollouts.states.reshape(-1, rollouts.states.shape[-1])[mask]
    raw_actions = rollouts.actions_raw.reshape(-1, rollouts.actions_raw.shape[-1])[mask]

    tail = value.predict(rollouts.next_states[:, -1, :]) * gamma if config.bootstrap_value else None
    returns_grid = _discounted_returns(rollouts.rewards, active, gamma, tail)
    returns = returns_grid.reshape(-1)[mask]

    baseline = value.predict(states)
    adv = returns - baseline
    if config.standardize_adv:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    x = policy._inputs(states)
    old_head = policy.approx.head(x)
    logp_old = np.atleast_1d(gaussian_log_prob(old_head, raw_actions))

    arrays = policy.parameter_arrays()
    n = len(adv)
    mb = min(config.minibatch_size, n)
    kl = 0.0
    epochs_taken = 0
    for _ in range(config.update_epochs):
        saved = [a.copy() for a in arrays]
        order = rng.permutation(n)
        for lo in range(0, n, mb):
            idx = order[lo : lo + mb]
            head = policy.approx.head(x[idx])
            logp_new = np.atleast_1d(gaussian_log_prob(head, raw_actions[idx]))
            ratio = np.exp(logp_new - logp_old[idx])
            a_mb = adv[idx]
            unclipped = ratio * a_mb
            clipped = np.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * a_mb
            inside = (ratio > 1.0 - config.clip_eps) & (ratio < 1.0 + config.clip_eps)
            coef = np.where((unclipped <= clipped) | inside, ratio * a_mb, 0.0) / len(idx)
            grads = policy.approx.weighted_objective_grads(
                x[idx], raw_actions[idx], coef, entropy_coeff=config.entropy_coef / len(idx)
            )
            grads = clip_grad_norm(grads, config.max_grad_norm)
            optimizer.step(arrays, [-g for g in grads])  # ascend
        kl = kl_between_heads(old_head, policy.approx.head(x))
        if kl > config.kl_max:
            for a, s in zip(arrays, saved):
                a[...] = s
            kl = kl_between_heads(old_head, policy.approx.head(x))
            break
        epochs_taken += 1

    # The baseline only needs a coarse fit; cap its regression batch.
    stride = max(1, n // 2048)
    value_loss = value.fit(states[::stride], returns[::stride], config.value_steps)
    policy.version += 1
    cur_head = policy.approx.head(x)
    logp_final = np.atleast_1d(gaussian_log_prob(cur_head, raw_actions))
    ratio_final = np.exp(logp_final - logp_old)
    surrogate = float(np.mean(np.minimum(
        ratio_final * adv,
        np.clip(ratio_final, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv,
    )))
    ent = gaussian_entropy_mean(cur_head)
    return {
        "kl": float(kl),
        "steps": float(epochs_taken),
        "entropy": ent,
        "surrogate": surrogate,
        "value_loss": float(value_loss),
        "mean_return": float(returns_grid[:, 0].mean()),
    }


def gaussian_entropy_mean(head) -> float:
    """Mean per-sample entropy of a (possibly broadcast) head."""
    from .nets import GaussianHead, gaussian_entropy

    mean = np.atleast_2d(head.mean)
    log_std = np.broadcast_to(np.asarray(head.log_std, dtype=float), mean.shape)
    h = gaussian_entropy(GaussianHead(mean, log_std, head.std_min, head.std_max))
    return float(np.mean(h))
