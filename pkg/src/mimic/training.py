"""End-to-end training orchestration.

One outer iteration collects real transitions with the current policy, then
alternates blocks of adversarial transition learning (critic steps + clipped
surrogate ascent on pseudo-rewards + l2 regression) with policy updates on
model-synthesized rollouts.  The supervised-only ablation shares the loop but
trains the model by the l2 term alone.  Runs are hermetic: given a config and
a seed, metric logs and learning-curve files reproduce byte for byte.

Randomness is split into named independent streams up front, so structurally
absent stages (e.g. critic training in the supervised ablation) cannot shift
the draws of the stages both modes share.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, VerifySection, config_to_json
from .core import TransitionDataset
from .critic import Critic, CriticConfig, assemble_mixture_batch, critic_train_step, pseudo_reward
from .envs import ContinuousEnv, make_env, make_random_mdp, random_tabular_policy
from .exceptions import RunAborted
from .nets import Adam, write_blob
from .oracle import (
    BoundReport,
    bellman_flow_residual,
    exact_occupancy,
    exact_occupancy_array,
    mc_occupancy,
    project_rows_to_simplex,
    sampling_decomposition_report,
    tv_distance,
    verify_consistency,
    verify_error_bound,
    verify_short_horizon_bound,
)
from .policy import GaussianPolicy, PolicyConfig, ValueBaseline, policy_update
from .rollouts import (
    PolicyQueue,
    StepCounter,
    SyntheticRollouts,
    collect_real,
    evaluate_policy,
    synthesize_short_rollouts,
)
from .transition import Normalizer, TransitionLossConfig, TransitionModel, transition_update_step

__all__ = ["mi_train", "baseline_supervised", "run_single", "run_verification_suite", "CURVE_HEADER"]

CURVE_HEADER = "real_steps,eval_return_mean,eval_return_std"

_STREAMS = (
    "env",
    "model_init",
    "policy_init",
    "critic_init",
    "value_init",
    "critic_batches",
    "transition_rollouts",
    "policy_rollouts",
    "eval",
    "l2_batches",
)


def _named_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(seq) for name, seq in zip(_STREAMS, children)}


class _MetricsWriter:
    def __init__(self, path: str):
        self._fh = open(path, "w")

    def write(self, row: dict) -> None:
        self._fh.write(json.dumps(row, sort_keys=True) + "\n")

    def close(self) -> None:
        self._fh.close()


def _concat_datasets(datasets: list[TransitionDataset]) -> TransitionDataset:
    return TransitionDataset(
        states=np.concatenate([d.states for d in datasets]),
        actions=np.concatenate([d.actions for d in datasets]),
        rewards=np.concatenate([d.rewards for d in datasets]),
        next_states=np.concatenate([d.next_states for d in datasets]),
        terminals=np.concatenate([d.terminals for d in datasets]),
    )


def _merged_states_dataset(queue: PolicyQueue) -> TransitionDataset:
    """Concatenated view of the queued datasets (rollout start states)."""
    return _concat_datasets([e.dataset for e in queue.entries()])


def _stack_rollouts(parts: list[SyntheticRollouts]) -> SyntheticRollouts:
    return SyntheticRollouts(
        states=np.concatenate([p.states for p in parts]),
        actions=np.concatenate([p.actions for p in parts]),
        actions_raw=np.concatenate([p.actions_raw for p in parts]),
        next_states=np.concatenate([p.next_states for p in parts]),
        rewards=np.concatenate([p.rewards for p in parts]),
        logp_model=None if parts[0].logp_model is None
        else np.concatenate([p.logp_model for p in parts]),
        active=np.concatenate([p.active for p in parts]),
    )


def _synthesize_mixture_ppo_batch(
    model: TransitionModel,
    queue: PolicyQueue,
    horizon: int,
    total_count: int,
    rng: np.random.Generator,
) -> SyntheticRollouts:
    """Sample-mode rollouts under each queued policy (equal shares)."""
    entries = queue.entries()
    q = len(entries)
    share = [total_count // q] * q
    share[-1] += total_count - sum(share)
    parts = [
        synthesize_short_rollouts(model, e.snapshot, e.dataset, horizon, share[j], rng, mode="sample")
        for j, e in enumerate(entries)
        if share[j] > 0
    ]
    return _stack_rollouts(parts)


def _check_finite(stats: dict, context: dict, run_dir: str) -> None:
    bad = {k: v for k, v in stats.items() if isinstance(v, float) and not np.isfinite(v)}
    if bad:
        dump = {"context": context, "stats": {k: str(v) for k, v in stats.items()}}
        with open(os.path.join(run_dir, "abort.json"), "w") as fh:
            json.dump(dump, fh, indent=2, sort_keys=True)
        raise RunAborted(f"non-finite loss {sorted(bad)} at {context}; diagnostics dumped")


def run_single(cfg: RunConfig, seed: int, run_dir: str, adversarial: bool) -> list[tuple[int, float, float]]:
    """One seed's full training run; returns the learning-curve rows.

    ``adversarial=False`` is the supervised-only ablation: the critic and the
    surrogate term are skipped entirely and the transition model trains on the
    l2 term alone.  Everything else (collection, policy optimization,
    evaluation, artifacts) is shared.
    """
    os.makedirs(run_dir, exist_ok=True)
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    env = make_env(cfg.env_name, **cfg.env_params)
    spec = env.spec
    gamma = cfg.gamma if cfg.gamma is not None else spec.gamma
    streams = _named_streams(seed)

    normalizer = Normalizer(spec.state_dim)
    policy = GaussianPolicy(
        spec.state_dim, env.action_low, env.action_high, normalizer, streams["policy_init"],
        hidden=tuple(cfg.policy.hidden), activation=cfg.policy.activation,
        std_mode=cfg.policy.std_mode, std_min=cfg.policy.std_min, std_max=cfg.policy.std_max,
    )
    model = TransitionModel(
        spec.state_dim, spec.action_dim, normalizer, streams["model_init"],
        hidden=tuple(cfg.transition.hidden), activation=cfg.transition.activation,
        std_mode=cfg.transition.std_mode, std_min=cfg.transition.std_min,
        std_max=cfg.transition.std_max,
    )
    value = ValueBaseline(
        spec.state_dim, normalizer, streams["value_init"],
        hidden=tuple(cfg.policy.value_hidden), activation=cfg.policy.activation,
        lr=cfg.policy.value_lr,
    )
    critic = Critic(
        spec.state_dim, spec.action_dim, normalizer, streams["critic_init"],
        hidden=tuple(cfg.critic.hidden), activation=cfg.critic.activation,
        spectral_norm=cfg.critic.spectral_norm,
    )

    critic_cfg = CriticConfig(
        delta=cfg.mi.delta, gp_weight=cfg.critic.gp_weight, gp_mode=cfg.critic.gp_mode,
        spectral_norm=cfg.critic.spectral_norm, lr=cfg.critic.lr,
        steps_per_epoch=cfg.critic.steps_per_epoch, batch_real=cfg.critic.batch_real,
        batch_fake=cfg.critic.batch_fake,
    )
    trans_cfg = TransitionLossConfig(
        eta=cfg.mi.eta, clip_eps=cfg.transition.clip_eps,
        adversarial_weight=cfg.transition.adversarial_weight if adversarial else 0.0,
        adv_discount=cfg.transition.adv_discount, baseline=cfg.transition.baseline,
        standardize_adv=cfg.transition.standardize_adv, max_grad_norm=cfg.transition.max_grad_norm,
    )
    policy_cfg = PolicyConfig(
        lr=cfg.policy.lr, clip_eps=cfg.policy.clip_eps, kl_max=cfg.policy.kl_max,
        update_epochs=cfg.policy.update_epochs, minibatch_size=cfg.policy.minibatch_size,
        entropy_coef=cfg.mi.entropy_coef,
        std_min=cfg.policy.std_min, std_max=cfg.policy.std_max,
        standardize_adv=cfg.policy.standardize_adv, bootstrap_value=cfg.policy.bootstrap_value,
        value_lr=cfg.policy.value_lr, value_steps=cfg.policy.value_steps,
        max_grad_norm=cfg.policy.max_grad_norm,
    )
    model_opt = Adam(cfg.transition.lr)
    policy_opt = Adam(cfg.policy.lr)
    critic_opt = Adam(cfg.critic.lr)

    queue = PolicyQueue(cfg.mi.queue_size)
    counter = StepCounter()
    metrics = _MetricsWriter(os.path.join(run_dir, "metrics.jsonl"))
    curve: list[tuple[int, float, float]] = []
    history: list[TransitionDataset] = []

    def l2_source() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if cfg.transition.l2_full_history:
            ds = _concat_datasets(history)
            rows = ds.sample_rows(cfg.transition.l2_batch, streams["l2_batches"])
            return rows.states, rows.actions, rows.next_states
        return queue.sample_real(cfg.transition.l2_batch, streams["l2_batches"])[:3]

    try:
        for it in range(cfg.mi.n_iterations):
            history.append(collect_real(env, policy, cfg.mi.real_steps_per_iter, streams["env"],
                                        normalizer, queue, counter))
            for block in range(cfg.mi.n_model_blocks):
                model_old = model.snapshot() if adversarial else None
                ppo_rolls = None
                if adversarial and cfg.mi.n_transition > 0:
                    ppo_rolls = _synthesize_mixture_ppo_batch(
                        model, queue, cfg.mi.model_horizon, cfg.transition.rollout_count,
                        streams["transition_rollouts"],
                    )
                for epoch in range(cfg.mi.n_transition):
                    stats: dict[str, float] = {}
                    if adversarial:
                        for _ in range(critic_cfg.steps_per_epoch):
                            cbatch = assemble_mixture_batch(
                                queue, model, streams["critic_batches"],
                                critic_cfg.batch_real, critic_cfg.batch_fake,
                                cfg.mi.model_horizon,
                            )
                            cstats = critic_train_step(
                                critic, cbatch, critic_cfg, streams["critic_batches"], critic_opt
                            )
                        stats.update(cstats)
                        k, h, ds_dim = ppo_rolls.states.shape
                        flat = (
                            ppo_rolls.states.reshape(-1, ds_dim),
                            ppo_rolls.actions.reshape(-1, ppo_rolls.actions.shape[-1]),
                            ppo_rolls.next_states.reshape(-1, ds_dim),
                        )
                        pseudo = pseudo_reward(critic, *flat).reshape(k, h)
                        from .transition import pseudo_advantages

                        adv = pseudo_advantages(pseudo, trans_cfg, ppo_rolls.active)
                        tstats = transition_update_step(
                            model, model_old, flat, adv.reshape(-1), l2_source(), trans_cfg, model_opt
                        )
                    else:
                        tstats = transition_update_step(
                            model, None, None, None, l2_source(), trans_cfg, model_opt
                        )
                    stats.update(tstats)
                    _check_finite(stats, {"iter": it, "block": block, "epoch": epoch}, run_dir)
                    metrics.write({"kind": "transition", "iter": it, "block": block,
                                   "epoch": epoch, **{k: float(v) for k, v in stats.items()}})
                start_ds = _merged_states_dataset(queue)
                for epoch in range(cfg.mi.n_policy):
                    rolls = synthesize_short_rollouts(
                        model, policy, start_ds, cfg.policy.rollout_horizon,
                        cfg.policy.rollout_count, streams["policy_rollouts"], mode="mean", env=env,
                    )
                    pstats = policy_update(policy, rolls, value, policy_cfg, policy_opt, gamma,
                                           streams["policy_rollouts"])
                    _check_finite(pstats, {"iter": it, "block": block, "epoch": epoch,
                                           "stage": "policy"}, run_dir)
                    metrics.write({"kind": "policy", "iter": it, "block": block,
                                   "epoch": epoch, **{k: float(v) for k, v in pstats.items()}})

            ret_mean, ret_std = evaluate_policy(env, policy, cfg.mi.eval_episodes, streams["eval"])
            curve.append((counter.count, ret_mean, ret_std))
            metrics.write({"kind": "eval", "iter": it, "real_steps": counter.count,
                           "return_mean": ret_mean, "return_std": ret_std})
            ckpt = {**model.state_dict(), **policy.state_dict()}
            if adversarial:
                ckpt.update(critic.state_dict())
            write_blob(os.path.join(run_dir, "checkpoints", f"iter_{it:03d}.blob"), ckpt)
    finally:
        metrics.close()

    with open(os.path.join(run_dir, "curve.csv"), "w") as fh:
        fh.write(CURVE_HEADER + "\n")
        for steps, mean, std in curve:
            fh.write(f"{steps},{mean!r},{std!r}\n")
    return curve


def mi_train(cfg: RunConfig, seed: int, run_dir: str) -> list[tuple[int, float, float]]:
    """Adversarial model-learning run (the full algorithm)."""
    return run_single(cfg, seed, run_dir, adversarial=True)


def baseline_supervised(cfg: RunConfig, seed: int, run_dir: str) -> list[tuple[int, float, float]]:
    """Ablation: identical loop with the adversarial term removed."""
    return run_single(cfg, seed, run_dir, adversarial=False)


# ---------------------------------------------------------------------------
# Verification suite (the `verify` mode)
# ---------------------------------------------------------------------------


def run_verification_suite(vcfg: VerifySection, rng: np.random.Generator) -> list[BoundReport]:
    """Certification corpus over random tabular instances.

    Emits one report per checked inequality: occupancy-solver residual and
    Monte-Carlo agreement, reward-gap bounds, short-horizon bounds,
    consistency-at-optimality, and the short-rollout decomposition's triangle
    inequality.
    """
    reports: list[BoundReport] = []

    for k in range(vcfg.n_occupancy):
        n = int(rng.integers(2, vcfg.max_states + 1))
        mdp = make_random_mdp(n, int(rng.integers(1, 4)), rng, gamma=float(rng.uniform(0.5, 0.97)))
        policy = random_tabular_policy(mdp.n_states, mdp.n_actions, rng)
        rho = exact_occupancy_array(mdp, policy)
        reports.append(BoundReport(
            bellman_flow_residual(mdp, policy, rho), 1e-10, f"occupancy residual #{k}"
        ))
        emp = mc_occupancy(mdp, policy, vcfg.occupancy_rollouts, rng)
        reports.append(BoundReport(
            tv_distance(exact_occupancy(mdp, policy), emp), 0.02, f"occupancy monte-carlo #{k}"
        ))

    for k in range(vcfg.n_error_bound):
        n = int(rng.integers(2, 6))
        mdp = make_random_mdp(n, 2, rng, gamma=float(rng.uniform(0.5, 0.97)))
        policy = random_tabular_policy(n, 2, rng)
        t_prime = project_rows_to_simplex(mdp.transition + rng.normal(0, 0.3, mdp.transition.shape))
        t_prime /= t_prime.sum(axis=2, keepdims=True)
        rep = verify_error_bound(mdp, t_prime, policy)
        rep.instance = f"reward-gap #{k}"
        reports.append(rep)

    for k in range(vcfg.n_short_horizon):
        n = int(rng.integers(2, 7))
        gamma = float(rng.uniform(0.3, 0.99))
        beta = float(rng.uniform(0.0, gamma * 0.98))
        mdp = make_random_mdp(n, 2, rng, gamma=gamma)
        policy = random_tabular_policy(n, 2, rng)
        rep = verify_short_horizon_bound(mdp, policy, gamma, beta)
        rep.instance = f"short-horizon #{k}"
        reports.append(rep)

    for k in range(vcfg.n_consistency):
        mdp = make_random_mdp(vcfg.consistency_states, 2, rng, gamma=0.9)
        policy = random_tabular_policy(vcfg.consistency_states, 2, rng)
        rep = verify_consistency(mdp, policy, tol=vcfg.consistency_tol, rng=rng)
        rep.instance = f"consistency #{k}"
        reports.append(rep)

    for k in range(vcfg.decomposition_seeds):
        mdp = make_random_mdp(4, 2, rng, gamma=0.9)
        policy = random_tabular_policy(4, 2, rng)
        model_t = rng.dirichlet(np.ones(4), size=(4, 2))
        rows = sampling_decomposition_report(
            mdp, policy, model_t, 0.9, 0.5, vcfg.decomposition_n, rng
        )
        for row in rows:
            reports.append(BoundReport(
                row.lhs, row.total, f"decomposition triangle #{k} (N={row.n_rollouts})",
                {"middle_term": row.empirical_vs_exact},
            ))
    return reports
