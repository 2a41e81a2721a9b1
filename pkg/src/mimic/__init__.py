"""Adversarial transition-model learning with an exact certification oracle.

The library learns environment dynamics by matching discounted rollout
distributions with a hinge-truncated Wasserstein critic, trains policies
against the learned model, and ships an independent tabular oracle that
certifies the underlying consistency and error-bound guarantees.
"""

from .core import (
    EnvSpec,
    OccupancyEstimate,
    Trajectory,
    TrajectorySource,
    TransitionDataset,
    TransitionTuple,
    discounted_return,
    empirical_occupancy,
    sample_horizon,
)
from .envs import (
    CartpoleBalance,
    PendulumSwingup,
    TabularMDP,
    TwoArmBandit,
    make_env,
    make_random_mdp,
)
from .exceptions import (
    ConfigError,
    InvalidInput,
    InvalidMetric,
    InvalidParameter,
    InvalidState,
    MimicError,
    RunAborted,
)

__all__ = [
    "EnvSpec",
    "OccupancyEstimate",
    "Trajectory",
    "TrajectorySource",
    "TransitionDataset",
    "TransitionTuple",
    "discounted_return",
    "empirical_occupancy",
    "sample_horizon",
    "CartpoleBalance",
    "PendulumSwingup",
    "TabularMDP",
    "TwoArmBandit",
    "make_env",
    "make_random_mdp",
    "ConfigError",
    "InvalidInput",
    "InvalidMetric",
    "InvalidParameter",
    "InvalidState",
    "MimicError",
    "RunAborted",
]
