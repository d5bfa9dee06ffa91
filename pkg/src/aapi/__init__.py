"""Adversary-aware policy iteration for action-perturbed MDPs: exact tabular
solvers, OA-TD3 and OA-PPO agents, and an attack bench."""

from .errors import (
    ConfigError,
    DegenerateBaselineError,
    DimensionError,
    DivergenceError,
    EnvContractError,
    InstanceTooLargeError,
    NonConvergenceError,
    NonFiniteError,
    StaleTapeError,
)
from .mdp import FiniteAAMdp, TabularPolicy, policy_evaluation, policy_iteration, random_mdp
from .oapi import (
    adversary_route_values,
    exhaustive_maximin,
    oa_bellman_backup,
    oa_policy_evaluation,
    oa_policy_iteration,
)

__version__ = "0.1.0"
