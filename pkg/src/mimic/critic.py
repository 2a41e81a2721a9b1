"""Hinge-truncated Wasserstein critic over (s, a, s') triples.

The critic scores transition triples in normalized state coordinates; its
raw value doubles as the pseudo-reward for the transition learner.  Training
minimizes the hinge discriminator loss over mixtures of stored real data and
model-generated fakes, with an interpolated gradient penalty and spectral
normalization enforcing the Lipschitz constraint (both on by default,
individually switchable).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInput, InvalidParameter, InvalidState
from .nets import (
    Adam,
    MLPParams,
    apply_spectral_norm,
    backward,
    forward,
    init_mlp,
    input_gradient,
    input_gradient_param_grads,
)
from .rollouts import PolicyQueue, synthesize_short_rollouts
from .transition import Normalizer, TransitionModel

__all__ = [
    "CriticConfig",
    "CriticBatch",
    "Critic",
    "pseudo_reward",
    "hinge_critic_loss",
    "truncated_objective",
    "gradient_penalty",
    "critic_train_step",
    "assemble_mixture_batch",
]


@dataclass
class CriticConfig:
    delta: float = 1.0
    gp_weight: float = 10.0
    gp_mode: str = "interpolated"  # or "off"
    spectral_norm: bool = True
    lr: float = 1e-4
    steps_per_epoch: int = 5
    batch_real: int = 256
    batch_fake: int = 256

    def __post_init__(self) -> None:
        if self.delta <= 0.0:
            raise InvalidParameter("delta must be positive")
        if self.gp_weight < 0.0:
            raise InvalidParameter("gp_weight must be nonnegative")
        if self.gp_mode not in ("interpolated", "off"):
            raise InvalidParameter("gp_mode must be 'interpolated' or 'off'")


@dataclass
class CriticBatch:
    """Real and fake triples (plus the queue index each one came from)."""

    real_states: np.ndarray
    real_actions: np.ndarray
    real_next_states: np.ndarray
    fake_states: np.ndarray
    fake_actions: np.ndarray
    fake_next_states: np.ndarray
    real_source: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    fake_source: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self) -> None:
        if len(self.real_states) == 0 or len(self.fake_states) == 0:
            raise InvalidInput("a critic batch needs both real and fake triples")


class Critic:
    """Scalar-head MLP on concatenated (normalized s, a, normalized s')."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        normalizer: Normalizer,
        rng: np.random.Generator,
        hidden: tuple[int, ...] = (64, 64, 64),
        activation: str = "tanh",
        spectral_norm: bool = True,
    ):
        self.net: MLPParams = init_mlp(
            [2 * state_dim + action_dim, *hidden, 1], rng, activation, spectral_norm=spectral_norm
        )
        if spectral_norm:
            apply_spectral_norm(self.net)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.normalizer = normalizer

    def triple_inputs(self, states, actions, next_states) -> np.ndarray:
        s = np.atleast_2d(np.asarray(states, dtype=float))
        a = np.atleast_2d(np.asarray(actions, dtype=float))
        sp = np.atleast_2d(np.asarray(next_states, dtype=float))
        if s.shape[1] != self.state_dim or a.shape[1] != self.action_dim:
            raise InvalidInput("triple dims do not match the critic")
        return np.concatenate(
            [self.normalizer.normalize(s), a, self.normalizer.normalize(sp)], axis=1
        )

    def value(self, states, actions, next_states) -> np.ndarray:
        return forward(self.net, self.triple_inputs(states, actions, next_states))[:, 0]

    def parameter_arrays(self) -> list[np.ndarray]:
        return self.net.parameter_arrays()

    def state_dict(self, prefix: str = "critic.") -> dict[str, np.ndarray]:
        from .nets import save_mlp

        return save_mlp(self.net, prefix)


def pseudo_reward(critic: Critic, states, actions, next_states) -> np.ndarray:
    """Raw (untruncated) critic value; the reward of the transition MDP."""
    return critic.value(states, actions, next_states)


def hinge_critic_loss(critic: Critic, batch: CriticBatch, delta: float) -> float:
    """mean(max(0, delta - f(real))) + mean(max(0, delta + f(fake)))."""
    f_real = critic.value(batch.real_states, batch.real_actions, batch.real_next_states)
    f_fake = critic.value(batch.fake_states, batch.fake_actions, batch.fake_next_states)
    return float(np.maximum(0.0, delta - f_real).mean() + np.maximum(0.0, delta + f_fake).mean())


def truncated_objective(critic: Critic, batch: CriticBatch, delta: float) -> float:
    """mean(min(delta, f(real))) + mean(min(delta, -f(fake))).

    Adding the hinge loss to this value gives exactly 2 * delta for any critic
    and batch, via min(delta, x) = delta - max(0, delta - x).
    """
    f_real = critic.value(batch.real_states, batch.real_actions, batch.real_next_states)
    f_fake = critic.value(batch.fake_states, batch.fake_actions, batch.fake_next_states)
    return float(np.minimum(delta, f_real).mean() + np.minimum(delta, -f_fake).mean())


def _interpolates(batch: CriticBatch, critic: Critic, rng: np.random.Generator) -> np.ndarray:
    """Uniform interpolates between randomly matched real and fake inputs."""
    real = critic.triple_inputs(batch.real_states, batch.real_actions, batch.real_next_states)
    fake = critic.triple_inputs(batch.fake_states, batch.fake_actions, batch.fake_next_states)
    n = max(len(real), len(fake))
    ri = rng.integers(0, len(real), size=n) if len(real) != n else np.arange(n)
    fi = rng.integers(0, len(fake), size=n) if len(fake) != n else np.arange(n)
    u = rng.random((n, 1))
    return u * real[ri] + (1.0 - u) * fake[fi]


def gradient_penalty(critic: Critic, batch: CriticBatch, rng: np.random.Generator) -> float:
    """mean((||grad_x f(interpolate)|| - 1)^2) from the exact input gradient."""
    x = _interpolates(batch, critic, rng)
    g = input_gradient(critic.net, x)
    norms = np.linalg.norm(g, axis=1)
    return float(np.mean((norms - 1.0) ** 2))


def critic_train_step(
    critic: Critic,
    batch: CriticBatch,
    config: CriticConfig,
    rng: np.random.Generator,
    optimizer: Adam,
) -> dict[str, float]:
    """One hinge + gradient-penalty descent step, then spectral reprojection."""
    real_in = critic.triple_inputs(batch.real_states, batch.real_actions, batch.real_next_states)
    fake_in = critic.triple_inputs(batch.fake_states, batch.fake_actions, batch.fake_next_states)
    f_real = forward(critic.net, real_in)[:, 0]
    f_fake = forward(critic.net, fake_in)[:, 0]

    # Hinge gradients: active real samples push f up, active fakes push it down.
    cot_real = (-((config.delta - f_real) > 0.0).astype(float) / len(f_real))[:, None]
    cot_fake = (((config.delta + f_fake) > 0.0).astype(float) / len(f_fake))[:, None]
    g_real, _ = backward(critic.net, real_in, cot_real)
    g_fake, _ = backward(critic.net, fake_in, cot_fake)
    flat = []
    for (gw_r, gb_r), (gw_f, gb_f) in zip(g_real, g_fake):
        flat.extend((gw_r + gw_f, gb_r + gb_f))

    gp_value = 0.0
    if config.gp_mode == "interpolated" and config.gp_weight > 0.0:
        x = _interpolates(batch, critic, rng)
        g = input_gradient(critic.net, x)
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        gp_value = float(np.mean((norms - 1.0) ** 2))
        seeds = 2.0 * (norms - 1.0) / (norms + 1e-12) * g / len(x)
        gp_grads = input_gradient_param_grads(critic.net, x, seeds)
        flat = [
            acc + config.gp_weight * gpg
            for acc, gpg in zip(flat, (g for pair in gp_grads for g in pair))
        ]

    optimizer.step(critic.parameter_arrays(), flat)
    if config.spectral_norm:
        apply_spectral_norm(critic.net)

    hinge = float(
        np.maximum(0.0, config.delta - f_real).mean() + np.maximum(0.0, config.delta + f_fake).mean()
    )
    return {
        "critic_loss": hinge,
        "gradient_penalty": gp_value,
        "real_score": float(f_real.mean()),
        "fake_score": float(f_fake.mean()),
    }


def assemble_mixture_batch(
    queue: PolicyQueue,
    model: TransitionModel,
    rng: np.random.Generator,
    n_real: int,
    n_fake: int,
    horizon: int,
) -> CriticBatch:
    """Batch over the equal-weight mixture of the queued policies' measures.

    Real triples come uniformly from the stored datasets; fake triples are
    synthesized by rolling the current model under each stored policy snapshot
    (Gaussian sampling mode) from that policy's own real states, with the fake
    budget split evenly across the queue.
    """
    if len(queue) == 0:
        raise InvalidState("policy queue is empty")
    rs, ra, rn, r_src = queue.sample_real(n_real, rng)

    entries = queue.entries()
    q = len(entries)
    share = [n_fake // q] * q
    share[-1] += n_fake - sum(share)
    fs, fa, fn, f_src = [], [], [], []
    for j, entry in enumerate(entries):
        if share[j] == 0:
            continue
        count = -(-share[j] // horizon)  # ceil
        rolls = synthesize_short_rollouts(
            model, entry.snapshot, entry.dataset, horizon, count, rng, mode="sample"
        )
        s, a, sp = rolls.flat_triples()
        take = rng.permutation(len(s))[: share[j]]
        fs.append(s[take])
        fa.append(a[take])
        fn.append(sp[take])
        f_src.append(np.full(share[j], j, dtype=int))
    return CriticBatch(
        real_states=rs,
        real_actions=ra,
        real_next_states=rn,
        fake_states=np.concatenate(fs),
        fake_actions=np.concatenate(fa),
        fake_next_states=np.concatenate(fn),
        real_source=r_src,
        fake_source=np.concatenate(f_src),
    )
