"""Point-mass maze: a ball pushed by bounded forces through a walled grid.

Cells are 1 m squares.  ``x`` grows with the column index and ``y`` grows
upward, so the first text row is the top of the maze.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .base import Env

U_MAZE = """\
#########
#G......#
#.......#
######..#
#S......#
#.......#
#########
"""


@dataclass(frozen=True, eq=False)
class Maze2dSpec:
    walls: np.ndarray  # (rows, cols) bool, True = wall
    start: tuple  # (x, y) metres
    goal: tuple  # (x, y) metres
    goal_radius: float = 0.5
    max_speed: float = 5.0
    force_scale: float = 1.0
    dt: float = 0.05
    goal_reward: float = 200.0
    max_episode_steps: int = 300
    start_noise: float = 0.1
    layout: str = field(default="", repr=False)

    def __post_init__(self):
        walls = np.array(self.walls, dtype=bool)
        walls.setflags(write=False)
        object.__setattr__(self, "walls", walls)
        if self.goal_radius <= 0 or self.max_speed <= 0:
            raise ValueError("goal radius and speed cap must be positive")
        for name, pt in (("start", self.start), ("goal", self.goal)):
            if self.is_wall(np.asarray(pt, dtype=float)):
                raise ValueError(f"{name} {pt} lies inside a wall")

    @property
    def rows(self) -> int:
        return self.walls.shape[0]

    @property
    def cols(self) -> int:
        return self.walls.shape[1]

    def is_wall(self, pos) -> bool:
        col = int(np.floor(pos[0]))
        row = self.rows - 1 - int(np.floor(pos[1]))
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            return True
        return bool(self.walls[row, col])


def parse_maze(text: str, **overrides) -> Maze2dSpec:
    """Build a spec from a text grid: ``#`` wall, ``.`` free, ``S`` start, ``G`` goal."""
    lines = [ln.rstrip("\n") for ln in text.strip("\n").splitlines() if ln.strip()]
    width = max(len(ln) for ln in lines)
    rows = len(lines)
    walls = np.ones((rows, width), dtype=bool)
    start = goal = None
    for r, ln in enumerate(lines):
        for c, ch in enumerate(ln):
            if ch not in "#.SG":
                raise ValueError(f"unknown maze character {ch!r} at row {r}, col {c}")
            walls[r, c] = ch == "#"
            centre = (c + 0.5, rows - 1 - r + 0.5)
            if ch == "S":
                start = centre
            elif ch == "G":
                goal = centre
    if start is None or goal is None:
        raise ValueError("maze needs exactly one 'S' and one 'G'")
    return Maze2dSpec(walls=walls, start=start, goal=goal, layout="\n".join(lines), **overrides)


def maze2d_step(state, action, spec: Maze2dSpec):
    """Semi-implicit Euler step with axis-separated wall collisions.

    ``state`` is ``(x, y, vx, vy)``.  Returns ``(state', reward, done)`` where
    ``done`` means the goal was reached.
    """
    pos = np.array(state[:2], dtype=float)
    vel = np.array(state[2:], dtype=float)
    a = np.clip(np.asarray(action, dtype=float).reshape(2), -1.0, 1.0)
    vel = np.clip(vel + spec.force_scale * a * spec.dt, -spec.max_speed, spec.max_speed)
    for axis in range(2):
        trial = pos.copy()
        trial[axis] += vel[axis] * spec.dt
        if spec.is_wall(trial):
            vel[axis] = 0.0
        else:
            pos = trial
    reached = bool(np.linalg.norm(pos - np.asarray(spec.goal)) < spec.goal_radius)
    reward = spec.goal_reward if reached else 0.0
    return np.concatenate([pos, vel]), reward, reached


class Maze2d(Env):
    obs_dim = 4
    act_dim = 2
    env_id = "maze2d"

    def __init__(self, spec: Optional[Maze2dSpec] = None):
        super().__init__()
        self.spec = spec or parse_maze(U_MAZE)
        self.max_episode_steps = self.spec.max_episode_steps
        self.state = np.zeros(4)
        self.history = []

    def _reset(self):
        start = np.asarray(self.spec.start, dtype=float)
        if self.spec.start_noise > 0:
            start = start + self.rng.uniform(-self.spec.start_noise, self.spec.start_noise, 2)
        self.state = np.concatenate([start, np.zeros(2)])
        self.history = []
        return self.state.copy()

    def _step(self, action):
        nxt, reward, reached = maze2d_step(self.state, action, self.spec)
        self.history.append((self.t, *nxt, *np.clip(action, -1, 1), reward))
        self.state = nxt
        return nxt.copy(), reward, reached

    def dump_trajectory(self, path) -> None:
        """Write the current episode as CSV ``t, x, y, vx, vy, ax, ay, r``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "vx", "vy", "ax", "ay", "r"])
            for row in self.history:
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    def spec_dict(self):
        s = self.spec
        return {
            "id": self.env_id, "layout": s.layout, "goal_radius": s.goal_radius,
            "max_speed": s.max_speed, "force_scale": s.force_scale, "dt": s.dt,
            "goal_reward": s.goal_reward, "max_episode_steps": s.max_episode_steps,
            "start_noise": s.start_noise,
        }
