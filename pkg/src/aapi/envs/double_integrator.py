from __future__ import annotations

import numpy as np

from .base import Env

DT = 0.05
EPISODE_STEPS = 200


def double_integrator_step(state, action):
    """One step of ``x'' = a``; returns ``(state', reward, done)`` with ``done`` always False.

    The cost is charged on the pre-step state and the applied action.
    """
    x, v = float(state[0]), float(state[1])
    a = float(np.clip(np.asarray(action, dtype=float).reshape(-1)[0], -1.0, 1.0))
    reward = -(x * x + 0.1 * v * v + 0.001 * a * a)
    v = v + a * DT
    x = x + v * DT
    return np.array([x, v]), reward, False


class DoubleIntegrator(Env):
    obs_dim = 2
    act_dim = 1
    max_episode_steps = EPISODE_STEPS
    env_id = "double_integrator"

    def __init__(self, max_episode_steps: int = EPISODE_STEPS):
        super().__init__()
        self.max_episode_steps = max_episode_steps
        self.state = np.zeros(2)

    def _reset(self):
        self.state = np.array([self.rng.uniform(-1.0, 1.0), 0.0])
        return self.state.copy()

    def _step(self, action):
        self.state, reward, terminal = double_integrator_step(self.state, action)
        return self.state.copy(), reward, terminal

    def spec_dict(self):
        return {"id": self.env_id, "max_episode_steps": self.max_episode_steps}
