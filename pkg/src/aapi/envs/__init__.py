"""Environment registry."""

from __future__ import annotations

from .base import Env
from .double_integrator import DoubleIntegrator, double_integrator_step
from .gridworld import FiniteMdpEnv, make_hazard_gridworld, shortest_path_policy
from .maze2d import U_MAZE, Maze2d, Maze2dSpec, maze2d_step, parse_maze

TABULAR_ENVS = ("hazard_gridworld", "finite_mdp")
CONTINUOUS_ENVS = ("double_integrator", "maze2d")
ENV_PARAMS = {
    "hazard_gridworld": ("n", "hazard_penalty", "eps", "gamma", "hazards", "max_episode_steps"),
    "finite_mdp": ("mdp", "max_episode_steps"),
    "double_integrator": ("max_episode_steps",),
    "maze2d": ("layout", "goal_radius", "max_speed", "force_scale", "dt", "goal_reward",
               "max_episode_steps", "start_noise"),
}


def make_mdp(env_id: str, **params):
    """The ``FiniteAAMdp`` behind a tabular env id."""
    from ..mdp import FiniteAAMdp

    params = {k: v for k, v in params.items() if k != "max_episode_steps"}
    if env_id == "hazard_gridworld":
        if "hazards" in params and params["hazards"] is not None:
            params["hazards"] = [tuple(h) for h in params["hazards"]]
        return make_hazard_gridworld(**params)
    if env_id == "finite_mdp":
        return FiniteAAMdp.from_json(params["mdp"])
    raise ValueError(f"{env_id!r} is not a tabular environment")


def make_env(env_id: str, **params):
    if env_id not in ENV_PARAMS:
        raise ValueError(f"unknown environment {env_id!r}")
    unknown = set(params) - set(ENV_PARAMS[env_id])
    if unknown:
        raise ValueError(f"unknown parameters for {env_id}: {sorted(unknown)}")
    if env_id in TABULAR_ENVS:
        steps = params.get("max_episode_steps", 500)
        env = FiniteMdpEnv(make_mdp(env_id, **params), max_episode_steps=steps)
        env.env_id = env_id
        return env
    if env_id == "double_integrator":
        return DoubleIntegrator(**params)
    layout = params.pop("layout", U_MAZE)
    return Maze2d(parse_maze(layout, **params))


__all__ = [
    "Env", "DoubleIntegrator", "double_integrator_step", "FiniteMdpEnv", "make_hazard_gridworld",
    "shortest_path_policy", "Maze2d", "Maze2dSpec", "maze2d_step", "parse_maze", "U_MAZE",
    "make_env", "make_mdp", "TABULAR_ENVS", "CONTINUOUS_ENVS", "ENV_PARAMS",
]
