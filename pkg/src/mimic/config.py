"""Run configuration: strict JSON schema, defaults, profiles, snapshots.

Configs are human-editable JSON with strict unknown-key rejection (silent typo
absorption is the classic reproduction failure).  A named profile fills the
training-loop defaults for a benchmark task; explicit keys always win.  The
fully resolved snapshot that a run echoes into its directory round-trips
byte-identically through save/load and is sufficient to reproduce the run.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

from .envs import _ENV_FACTORIES
from .exceptions import ConfigError

__all__ = [
    "MISection",
    "CriticSection",
    "TransitionSection",
    "PolicySection",
    "VerifySection",
    "RunConfig",
    "PROFILES",
    "load_config",
    "save_config",
    "config_to_json",
    "parse_config",
]

MODES = ("mi", "supervised-baseline", "verify")

# Per-task training-loop defaults: blocks per iteration, l2 weight, transition
# and policy epochs, synthetic-rollout horizon, entropy coefficient.
PROFILES: dict[str, dict] = {
    "ant": {"n_model_blocks": 5, "eta": 15.0, "n_transition": 200, "n_policy": 20, "model_horizon": 20, "entropy_coef": 1e-5},
    "inverted-pendulum": {"n_model_blocks": 1, "eta": 1.0, "n_transition": 100, "n_policy": 50, "model_horizon": 15, "entropy_coef": 1e-5},
    "hopper": {"n_model_blocks": 10, "eta": 10.0, "n_transition": 100, "n_policy": 10, "model_horizon": 10, "entropy_coef": 1e-3},
    "cartpole": {"n_model_blocks": 1, "eta": 5.0, "n_transition": 100, "n_policy": 50, "model_horizon": 15, "entropy_coef": 1e-5},
    "swimmer": {"n_model_blocks": 2, "eta": 10.0, "n_transition": 50, "n_policy": 20, "model_horizon": 15, "entropy_coef": 1e-7},
    "half-cheetah": {"n_model_blocks": 2, "eta": 10.0, "n_transition": 200, "n_policy": 20, "model_horizon": 20, "entropy_coef": 1e-7},
    "pendulum": {"n_model_blocks": 5, "eta": 15.0, "n_transition": 100, "n_policy": 10, "model_horizon": 20, "entropy_coef": 1e-5},
    "reacher": {"n_model_blocks": 1, "eta": 5.0, "n_transition": 100, "n_policy": 50, "model_horizon": 15, "entropy_coef": 1e-5},
}


@dataclass
class MISection:
    """Outer-loop structure and the headline training constants."""

    n_iterations: int = 10
    real_steps_per_iter: int = 2000
    n_model_blocks: int = 5
    n_transition: int = 100
    n_policy: int = 10
    queue_size: int = 2
    model_horizon: int = 20
    eta: float = 15.0
    delta: float = 1.0
    entropy_coef: float = 1e-5
    eval_episodes: int = 10

    def validate(self) -> None:
        for name in ("n_iterations", "real_steps_per_iter", "n_model_blocks", "queue_size",
                     "model_horizon", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"mi.{name} must be >= 1")
        for name in ("n_transition", "n_policy"):
            if getattr(self, name) < 0:
                raise ConfigError(f"mi.{name} must be >= 0")
        if self.eta < 0.0:
            raise ConfigError("mi.eta must be >= 0")
        if self.delta <= 0.0:
            raise ConfigError("mi.delta must be > 0")


@dataclass
class CriticSection:
    hidden: list[int] = field(default_factory=lambda: [64, 64, 64])
    activation: str = "tanh"
    lr: float = 1e-4
    steps_per_epoch: int = 5
    batch_real: int = 256
    batch_fake: int = 256
    gp_weight: float = 10.0
    gp_mode: str = "interpolated"
    spectral_norm: bool = True

    def validate(self) -> None:
        if self.gp_mode not in ("interpolated", "off"):
            raise ConfigError("critic.gp_mode must be 'interpolated' or 'off'")
        if self.gp_weight < 0.0:
            raise ConfigError("critic.gp_weight must be >= 0")
        if min(self.batch_real, self.batch_fake, self.steps_per_epoch) < 1:
            raise ConfigError("critic batch sizes and steps must be >= 1")


@dataclass
class TransitionSection:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    lr: float = 3e-4
    clip_eps: float = 0.2
    rollout_count: int = 128
    adv_discount: float | None = None
    baseline: str = "time_mean"
    standardize_adv: bool = True
    adversarial_weight: float = 1.0
    std_mode: str = "global"
    std_min: float = 0.05
    std_max: float = 1.0
    l2_batch: int = 512
    l2_full_history: bool = False  # regression window: queue-only or all data
    max_grad_norm: float = 10.0

    def validate(self) -> None:
        if not (0.0 < self.clip_eps < 1.0):
            raise ConfigError("transition.clip_eps must lie in (0, 1)")
        if self.baseline not in ("time_mean", "none"):
            raise ConfigError("transition.baseline must be 'time_mean' or 'none'")
        if self.std_mode not in ("global", "state"):
            raise ConfigError("transition.std_mode must be 'global' or 'state'")
        if self.rollout_count < 1 or self.l2_batch < 1:
            raise ConfigError("transition.rollout_count and l2_batch must be >= 1")


@dataclass
class PolicySection:
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    lr: float = 1e-3
    clip_eps: float = 0.2
    kl_max: float = 0.03
    update_epochs: int = 10
    minibatch_size: int = 512
    std_mode: str = "global"
    std_min: float = 0.1
    std_max: float = 0.3
    rollout_count: int = 32
    rollout_horizon: int = 200
    standardize_adv: bool = True
    bootstrap_value: bool = True
    value_hidden: list[int] = field(default_factory=lambda: [64, 64])
    value_lr: float = 1e-3
    value_steps: int = 20
    max_grad_norm: float = 10.0

    def validate(self) -> None:
        if not (0.0 < self.clip_eps < 1.0):
            raise ConfigError("policy.clip_eps must lie in (0, 1)")
        if self.kl_max <= 0.0:
            raise ConfigError("policy.kl_max must be > 0")
        if self.std_min > self.std_max:
            raise ConfigError("policy.std_min must not exceed policy.std_max")
        if min(self.update_epochs, self.minibatch_size, self.rollout_count, self.rollout_horizon) < 1:
            raise ConfigError("policy loop sizes must be >= 1")


@dataclass
class VerifySection:
    """Corpus sizes for the certification suite."""

    max_states: int = 8
    n_occupancy: int = 20
    occupancy_rollouts: int = 100000
    n_error_bound: int = 100
    n_short_horizon: int = 100
    n_consistency: int = 20
    consistency_states: int = 4
    consistency_tol: float = 0.05
    decomposition_seeds: int = 20
    decomposition_n: list[int] = field(default_factory=lambda: [100, 10000])

    def validate(self) -> None:
        if self.max_states < 1 or self.consistency_states < 2:
            raise ConfigError("verify corpus sizes are out of range")
        if not self.decomposition_n:
            raise ConfigError("verify.decomposition_n must be non-empty")


@dataclass
class RunConfig:
    env_name: str = ""
    env_params: dict = field(default_factory=dict)
    mode: str = "mi"
    seeds: list[int] = field(default_factory=list)
    output_dir: str | None = None
    profile: str | None = None
    gamma: float | None = None  # overrides the environment's own discount
    mi: MISection = field(default_factory=MISection)
    critic: CriticSection = field(default_factory=CriticSection)
    transition: TransitionSection = field(default_factory=TransitionSection)
    policy: PolicySection = field(default_factory=PolicySection)
    verify: VerifySection = field(default_factory=VerifySection)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode != "verify":
            if self.env_name not in _ENV_FACTORIES:
                raise ConfigError(
                    f"unknown env {self.env_name!r}; available: {sorted(_ENV_FACTORIES)}"
                )
        if not self.seeds:
            raise ConfigError("seeds must be a non-empty list of integers")
        if self.profile is not None and self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; available: {sorted(PROFILES)}")
        if self.gamma is not None and not (0.0 < self.gamma < 1.0):
            raise ConfigError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        for section in (self.mi, self.critic, self.transition, self.policy, self.verify):
            section.validate()


_SECTION_TYPES = {
    "mi": MISection,
    "critic": CriticSection,
    "transition": TransitionSection,
    "policy": PolicySection,
    "verify": VerifySection,
}

_SCALAR_KEYS = {
    "mode": str,
    "seeds": list,
    "output_dir": (str, type(None)),
    "profile": (str, type(None)),
    "gamma": (int, float, type(None)),
}


def _build_section(cls, data: dict, label: str, profile: str | None):
    base = {f.name: (f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default)
            for f in fields(cls)}
    if profile is not None and cls is MISection:
        base.update(PROFILES[profile])
    for key, value in data.items():
        if key not in base:
            raise ConfigError(f"unknown field '{label}.{key}'")
        base[key] = value
    return cls(**base)


def parse_config(raw: dict) -> RunConfig:
    """Strict dict -> RunConfig: unknown keys, missing requirements, bad values error."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"env"} | set(_SCALAR_KEYS) | set(_SECTION_TYPES)
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown field {key!r}")
    for key, types in _SCALAR_KEYS.items():
        if key in raw and not isinstance(raw[key], types):
            raise ConfigError(f"field {key!r} has the wrong type")

    env_raw = raw.get("env")
    mode = raw.get("mode", "mi")
    if mode != "verify" and env_raw is None:
        raise ConfigError("missing required field 'env'")
    env_name, env_params = "", {}
    if env_raw is not None:
        if isinstance(env_raw, str):
            env_name = env_raw
        elif isinstance(env_raw, dict):
            extra = set(env_raw) - {"name", "params"}
            if extra:
                raise ConfigError(f"unknown field env.{sorted(extra)[0]!r}")
            if "name" not in env_raw:
                raise ConfigError("missing required field 'env.name'")
            env_name = env_raw["name"]
            env_params = dict(env_raw.get("params", {}))
        else:
            raise ConfigError("'env' must be a name or an object with name/params")

    if "seeds" not in raw or not raw["seeds"]:
        raise ConfigError("missing required field 'seeds'")
    seeds = [int(s) for s in raw["seeds"]]

    profile = raw.get("profile")
    if profile is not None and profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; available: {sorted(PROFILES)}")

    sections = {}
    for name, cls in _SECTION_TYPES.items():
        data = raw.get(name, {})
        if not isinstance(data, dict):
            raise ConfigError(f"section {name!r} must be an object")
        sections[name] = _build_section(cls, data, name, profile)

    cfg = RunConfig(
        env_name=env_name,
        env_params=env_params,
        mode=mode,
        seeds=seeds,
        output_dir=raw.get("output_dir"),
        profile=profile,
        gamma=raw.get("gamma"),
        **sections,
    )
    cfg.validate()
    return cfg


def config_to_json(cfg: RunConfig) -> str:
    """Canonical resolved snapshot (sorted keys, 2-space indent)."""
    body = {
        "env": {"name": cfg.env_name, "params": cfg.env_params},
        "mode": cfg.mode,
        "seeds": cfg.seeds,
        "output_dir": cfg.output_dir,
        "profile": cfg.profile,
        "gamma": cfg.gamma,
        **{name: dataclasses.asdict(getattr(cfg, name)) for name in _SECTION_TYPES},
    }
    return json.dumps(body, sort_keys=True, indent=2) + "\n"


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(config_to_json(cfg))


def load_config(path: str) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw)
