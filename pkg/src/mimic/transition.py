"""Learned Gaussian transition model.

The model predicts normalized state differences: the network maps
(normalized state, action) to the mean of (s' - s) / sigma_n, with a learned
log-std head.  Training combines clipped-surrogate ascent on critic
pseudo-rewards with an l2 regression term on real data; the l2 term touches
the mean head only, so the model's spread is shaped purely by the surrogate
objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInput, InvalidParameter
from .nets import Adam, GaussianApproximator, backward, clip_grad_norm, init_mlp

__all__ = [
    "Normalizer",
    "update_normalizer",
    "TransitionModel",
    "TransitionLossConfig",
    "pseudo_advantages",
    "transition_ppo_loss",
    "l2_loss",
    "total_transition_loss",
    "transition_update_step",
]


class Normalizer:
    """Streaming mean/std of observed states (population convention).

    Uses the parallel-combine update on (count, mean, M2), which matches a
    two-pass batch computation to floating precision.  The std is floored at
    1e-8 elementwise; before any data the normalizer is the identity.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros(dim)

    @property
    def std(self) -> np.ndarray:
        if self.count == 0:
            return np.ones(self.dim)
        return np.maximum(np.sqrt(self._m2 / self.count), 1e-8)

    def update(self, states: np.ndarray) -> None:
        states = np.asarray(states, dtype=float).reshape(-1, self.dim)
        n = len(states)
        if n == 0:
            return
        b_mean = states.mean(axis=0)
        b_m2 = ((states - b_mean) ** 2).sum(axis=0)
        delta = b_mean - self.mean
        total = self.count + n
        self.mean = self.mean + delta * (n / total)
        self._m2 = self._m2 + b_m2 + delta**2 * (self.count * n / total)
        self.count = total

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def state_dict(self) -> dict[str, np.ndarray]:
        return {
            "normalizer.mean": self.mean.copy(),
            "normalizer.m2": self._m2.copy(),
            "normalizer.count": np.array([float(self.count)]),
        }

    @classmethod
    def from_state_dict(cls, arrays: dict[str, np.ndarray]) -> "Normalizer":
        out = cls(len(arrays["normalizer.mean"]))
        out.mean = arrays["normalizer.mean"].copy()
        out._m2 = arrays["normalizer.m2"].copy()
        out.count = int(arrays["normalizer.count"][0])
        return out


def update_normalizer(normalizer: Normalizer, states: np.ndarray) -> Normalizer:
    """Fold a batch of states into the running statistics (returns the input)."""
    normalizer.update(states)
    return normalizer


@dataclass
class TransitionLossConfig:
    """Knobs of the combined transition objective."""

    eta: float = 10.0
    clip_eps: float = 0.2
    adversarial_weight: float = 1.0
    adv_discount: float | None = None  # None: 1 - 1/horizon of the rollouts
    baseline: str = "time_mean"  # or "none"
    standardize_adv: bool = False
    max_grad_norm: float = 10.0

    def __post_init__(self) -> None:
        if self.eta < 0.0:
            raise InvalidParameter("eta must be nonnegative")
        if not (0.0 < self.clip_eps < 1.0):
            raise InvalidParameter("clip_eps must lie in (0, 1)")
        if self.baseline not in ("time_mean", "none"):
            raise InvalidParameter("baseline must be 'time_mean' or 'none'")


class TransitionModel:
    """Gaussian next-state model over normalized state differences."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        normalizer: Normalizer,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (64, 64),
        activation: str = "tanh",
        std_mode: str = "global",
        std_min: float = 0.05,
        std_max: float = 1.0,
        init_log_std: float = -2.0,
    ):
        out = state_dim if std_mode == "global" else 2 * state_dim
        net = init_mlp([state_dim + action_dim, *hidden, out], rng, activation, final_scale=0.1)
        self.approx = GaussianApproximator(
            net, state_dim, std_mode, init_log_std=init_log_std, std_min=std_min, std_max=std_max
        )
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.normalizer = normalizer

    def _inputs(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        actions = np.atleast_2d(np.asarray(actions, dtype=float))
        if states.shape[1] != self.state_dim or actions.shape[1] != self.action_dim:
            raise InvalidInput("state/action dims do not match the model")
        return np.concatenate([self.normalizer.normalize(states), actions], axis=1)

    def diff_targets(self, states: np.ndarray, next_states: np.ndarray) -> np.ndarray:
        """Training target: (s' - s) / sigma_n."""
        s = np.atleast_2d(np.asarray(states, dtype=float))
        sp = np.atleast_2d(np.asarray(next_states, dtype=float))
        return (sp - s) / self.normalizer.std

    def mean_diff(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.atleast_2d(self.approx.mean_output(self._inputs(states, actions)))

    def predict_next_state_mean(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Deterministic decode: s + sigma_n * mean_diff(s, a)."""
        s = np.atleast_2d(np.asarray(states, dtype=float))
        out = s + self.normalizer.std * self.mean_diff(states, actions)
        return out if np.asarray(states).ndim == 2 else out[0]

    def sample_next_state(
        self, states: np.ndarray, actions: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        """Gaussian draw of the next state; also returns its model log-prob."""
        s = np.atleast_2d(np.asarray(states, dtype=float))
        head = self.approx.head(self._inputs(states, actions))
        diff = head.mean + head.std() * rng.standard_normal(np.shape(head.mean))
        from .nets import GaussianHead, gaussian_log_prob  # local names only

        logp = np.atleast_1d(gaussian_log_prob(GaussianHead(head.mean, head.log_std, head.std_min, head.std_max), diff))
        return s + self.normalizer.std * diff, logp

    def log_prob(self, states: np.ndarray, actions: np.ndarray, next_states: np.ndarray) -> np.ndarray:
        """Log density of the normalized state difference realized by (s, a, s')."""
        return self.approx.log_prob(self._inputs(states, actions), self.diff_targets(states, next_states))

    def parameter_arrays(self) -> list[np.ndarray]:
        return self.approx.parameter_arrays()

    def snapshot(self) -> "TransitionModel":
        """Frozen copy sharing the (static within a training block) normalizer."""
        dup = object.__new__(TransitionModel)
        dup.approx = self.approx.copy()
        dup.state_dim = self.state_dim
        dup.action_dim = self.action_dim
        dup.normalizer = self.normalizer
        return dup

    def state_dict(self, prefix: str = "transition.") -> dict[str, np.ndarray]:
        from .nets import save_mlp

        out = save_mlp(self.approx.net, prefix)
        if self.approx.log_std is not None:
            out[f"{prefix}log_std"] = self.approx.log_std.copy()
        out.update(self.normalizer.state_dict())
        return out


def pseudo_advantages(
    pseudo_rewards: np.ndarray,
    config: TransitionLossConfig,
    active: np.ndarray | None = None,
) -> np.ndarray:
    """Discounted reward-to-go minus a per-step-index mean baseline.

    ``pseudo_rewards`` is (rollouts, horizon); the discount defaults to
    1 - 1/horizon, the geometric rate whose expected length matches the
    rollout horizon.  With the baseline on, a constant reward yields exactly
    zero advantages.
    """
    r = np.asarray(pseudo_rewards, dtype=float)
    if r.ndim != 2:
        raise InvalidInput("pseudo_rewards must be (rollouts, horizon)")
    k, h = r.shape
    mask = np.ones_like(r, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    beta = config.adv_discount if config.adv_discount is not None else max(0.0, 1.0 - 1.0 / h)

    togo = np.zeros_like(r)
    acc = np.zeros(k)
    for t in range(h - 1, -1, -1):
        acc = np.where(mask[:, t], r[:, t] + beta * acc, 0.0)
        togo[:, t] = acc
    adv = togo
    if config.baseline == "time_mean":
        counts = np.maximum(mask.sum(axis=0), 1)
        means = (togo * mask).sum(axis=0) / counts
        adv = togo - means[None, :]
    if config.standardize_adv:
        vals = adv[mask]
        adv = (adv - vals.mean()) / (vals.std() + 1e-8)
    return np.where(mask, adv, 0.0)


def _ppo_pieces(
    model: TransitionModel,
    model_old: TransitionModel,
    states: np.ndarray,
    actions: np.ndarray,
    next_states: np.ndarray,
    advantages: np.ndarray,
    clip_eps: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Ratios, per-sample surrogate values and gradient coefficients."""
    logp_new = model.log_prob(states, actions, next_states)
    logp_old = model_old.log_prob(states, actions, next_states)
    ratio = np.exp(logp_new - logp_old)
    valid = np.isfinite(ratio)
    n_skipped = int((~valid).sum())
    ratio = np.where(valid, ratio, 1.0)
    adv = np.where(valid, np.asarray(advantages, dtype=float), 0.0)

    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    values = np.minimum(unclipped, clipped)
    inside = (ratio > 1.0 - clip_eps) & (ratio < 1.0 + clip_eps)
    grad_coef = np.where((unclipped <= clipped) | inside, ratio * adv, 0.0)
    grad_coef = np.where(valid, grad_coef, 0.0)
    return values, grad_coef, valid, n_skipped


def transition_ppo_loss(
    model: TransitionModel,
    model_old: TransitionModel,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    advantages: np.ndarray,
    clip_eps: float,
) -> tuple[float, int]:
    """Clipped-surrogate value; non-finite ratios are skipped and counted."""
    states, actions, next_states = batch
    values, _, valid, n_skipped = _ppo_pieces(
        model, model_old, states, actions, next_states, advantages, clip_eps
    )
    denom = max(int(valid.sum()), 1)
    return float(values[valid].sum() / denom), n_skipped


def l2_loss(model: TransitionModel, states, actions, next_states) -> float:
    """Mean squared error of the predicted vs true normalized state differences."""
    err = model.mean_diff(states, actions) - model.diff_targets(states, next_states)
    return float(np.mean(err * err))


def total_transition_loss(
    model: TransitionModel,
    model_old: TransitionModel,
    ppo_batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    advantages: np.ndarray,
    real_batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    config: TransitionLossConfig,
) -> dict[str, float]:
    """-w * L_ppo + eta * L_l2 with its components."""
    ppo, n_skipped = transition_ppo_loss(model, model_old, ppo_batch, advantages, config.clip_eps)
    reg = l2_loss(model, *real_batch)
    return {
        "ppo": ppo,
        "l2": reg,
        "total": -config.adversarial_weight * ppo + config.eta * reg,
        "skipped": float(n_skipped),
    }


def _l2_gradients(model: TransitionModel, states, actions, next_states) -> list[np.ndarray]:
    """Gradient of the l2 term; the log-std head receives exactly zero."""
    inputs = model._inputs(states, actions)
    mean = np.atleast_2d(model.approx.mean_output(inputs))
    err = mean - model.diff_targets(states, next_states)
    cot_mean = 2.0 * err / err.size
    if model.approx.std_mode == "global":
        net_cot = cot_mean
    else:
        net_cot = np.concatenate([cot_mean, np.zeros_like(cot_mean)], axis=1)
    grads, _ = backward(model.approx.net, inputs, net_cot)
    flat = [g for pair in grads for g in pair]
    if model.approx.log_std is not None:
        flat.append(np.zeros_like(model.approx.log_std))
    return flat


def transition_update_step(
    model: TransitionModel,
    model_old: TransitionModel | None,
    ppo_batch: tuple[np.ndarray, np.ndarray, np.ndarray] | None,
    advantages: np.ndarray | None,
    real_batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    config: TransitionLossConfig,
    optimizer: Adam,
) -> dict[str, float]:
    """One descent step on the combined loss; returns logged components.

    With ``adversarial_weight == 0`` (or no surrogate batch) the update is
    exactly the supervised eta * l2 regression step.
    """
    stats: dict[str, float] = {"ppo": 0.0, "skipped": 0.0}
    grads = [np.zeros_like(a) for a in model.parameter_arrays()]

    use_ppo = (
        config.adversarial_weight != 0.0
        and model_old is not None
        and ppo_batch is not None
        and advantages is not None
    )
    if use_ppo:
        states, actions, next_states = ppo_batch
        values, coef, valid, n_skipped = _ppo_pieces(
            model, model_old, states, actions, next_states, advantages, config.clip_eps
        )
        denom = max(int(valid.sum()), 1)
        stats["ppo"] = float(values[valid].sum() / denom)
        stats["skipped"] = float(n_skipped)
        ppo_grads = model.approx.weighted_objective_grads(
            model._inputs(states, actions),
            model.diff_targets(states, next_states),
            coef / denom,
        )
        for g, gp in zip(grads, ppo_grads):
            g -= config.adversarial_weight * gp  # descend on -w * L_ppo

    if config.eta > 0.0:
        stats["l2"] = l2_loss(model, *real_batch)
        for g, gl in zip(grads, _l2_gradients(model, *real_batch)):
            g += config.eta * gl
    else:
        stats["l2"] = l2_loss(model, *real_batch)

    grads = clip_grad_norm(grads, config.max_grad_norm)
    optimizer.step(model.parameter_arrays(), grads)
    stats["total"] = -config.adversarial_weight * stats["ppo"] + config.eta * stats["l2"]
    if model.approx.log_std is not None:
        stats["model_std"] = float(np.exp(model.approx.log_std).mean())
    return stats
