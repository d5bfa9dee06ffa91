from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import EnvContractError


class Env:
    """Episodic environment with a box action space ``[-1, 1]^act_dim``.

    ``step`` returns ``(obs, reward, done)``.  ``done`` covers both real
    termination and the step limit; ``timed_out`` tells the two apart so
    learners can keep bootstrapping through truncation.
    """

    obs_dim: int
    act_dim: int
    max_episode_steps: int
    env_id: str = "env"

    def __init__(self):
        self.rng = np.random.default_rng()
        self.t = 0
        self.done = True
        self.timed_out = False

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.t = 0
        self.done = False
        self.timed_out = False
        return self._reset()

    def step(self, action):
        if self.done:
            raise EnvContractError("step() called on a finished episode; call reset() first")
        action = np.clip(np.asarray(action, dtype=float).reshape(self.act_dim), -1.0, 1.0)
        obs, reward, terminal = self._step(action)
        self.t += 1
        self.timed_out = (not terminal) and self.t >= self.max_episode_steps
        self.done = terminal or self.timed_out
        return obs, float(reward), self.done

    def _reset(self) -> np.ndarray:
        raise NotImplementedError

    def _step(self, action: np.ndarray):
        raise NotImplementedError

    def spec_dict(self) -> dict:
        return {"id": self.env_id}
