"""Finite gridworld with a hazard strip next to the shortest route.

Layout for ``n`` (row 0 at the top)::

    . H H ... H .      <- hazard strip (absorbing, entering pays hazard_penalty)
    S . . ... . G      <- shortest route hugs the hazard
    . . . ... . .
    ...

Every move costs -1, walking into the border leaves the agent in place, and
goal and hazard cells are absorbing with zero reward.  Actions are the four
moves embedded at right (1,0), left (-1,0), up (0,1), down (0,-1).  With
``epsilon >= 1`` the adversary can deflect a move sideways, so a rightward
step along the strip can be turned into a fall.
"""

from __future__ import annotations

from collections import deque
from typing import Iterable, Optional

import numpy as np

from ..errors import EnvContractError
from ..mdp import FiniteAAMdp

MOVES = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
ACTION_NAMES = ("right", "left", "up", "down")


class GridLayout:
    def __init__(self, n: int, hazards: Iterable[tuple], start: tuple, goal: tuple):
        self.n = n
        self.hazards = frozenset(hazards)
        self.start = start
        self.goal = goal

    def index(self, cell) -> int:
        return cell[0] * self.n + cell[1]

    def cell(self, index: int) -> tuple:
        return divmod(index, self.n)

    def move(self, cell, action: int):
        dc, dr = MOVES[action]
        r, c = cell[0] - int(dr), cell[1] + int(dc)
        if 0 <= r < self.n and 0 <= c < self.n:
            return (r, c)
        return cell


def _has_safe_path(layout: GridLayout) -> bool:
    seen = {layout.start}
    frontier = deque([layout.start])
    while frontier:
        cell = frontier.popleft()
        if cell == layout.goal:
            return True
        for a in range(4):
            nxt = layout.move(cell, a)
            if nxt not in seen and nxt not in layout.hazards:
                seen.add(nxt)
                frontier.append(nxt)
    return False


def hazard_layout(n: int, hazards: Optional[Iterable[tuple]] = None) -> GridLayout:
    if n < 3:
        raise ValueError(f"gridworld needs n >= 3, got {n}")
    if hazards is None:
        hazards = [(0, c) for c in range(1, n - 1)]
    layout = GridLayout(n, hazards, start=(1, 0), goal=(1, n - 1))
    if layout.start in layout.hazards or layout.goal in layout.hazards:
        raise ValueError("start and goal must not be hazard cells")
    if not _has_safe_path(layout):
        raise ValueError("degenerate layout: no hazard-free path from start to goal")
    return layout


def make_hazard_gridworld(n: int = 4, hazard_penalty: float = -50.0, eps: float = 1.0,
                          gamma: float = 0.9, hazards: Optional[Iterable[tuple]] = None
                          ) -> FiniteAAMdp:
    layout = hazard_layout(n, hazards)
    S, A = n * n, len(MOVES)
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    absorbing = set(layout.hazards) | {layout.goal}
    for s in range(S):
        cell = layout.cell(s)
        for a in range(A):
            if cell in absorbing:
                P[s, a, s] = 1.0
                continue
            nxt = layout.move(cell, a)
            P[s, a, layout.index(nxt)] = 1.0
            R[s, a] = hazard_penalty if nxt in layout.hazards else -1.0
    rho = np.zeros(S)
    rho[layout.index(layout.start)] = 1.0
    return FiniteAAMdp(S, MOVES, P, R, gamma, rho, eps)


def shortest_path_policy(n: int, hazards: Optional[Iterable[tuple]] = None) -> np.ndarray:
    """Nominal shortest-route actions: along the start row go right, elsewhere
    head for that row first."""
    layout = hazard_layout(n, hazards)
    actions = np.zeros(n * n, dtype=np.int64)
    for s in range(n * n):
        r, c = layout.cell(s)
        if r == layout.goal[0]:
            actions[s] = 0
        elif r > layout.goal[0]:
            actions[s] = 2
        else:
            actions[s] = 3
    return actions


class FiniteMdpEnv:
    """Sampling simulator for a ``FiniteAAMdp``; observations and actions are indices."""

    env_id = "finite_mdp"

    def __init__(self, mdp: FiniteAAMdp, max_episode_steps: int = 500):
        self.mdp = mdp
        self.max_episode_steps = max_episode_steps
        self.rng = np.random.default_rng()
        self.state = 0
        self.t = 0
        self.done = True
        self.timed_out = False
        absorbing = [
            s for s in range(mdp.n_states)
            if np.all(mdp.transition[s, :, s] == 1.0) and np.all(mdp.reward[s] == 0.0)
        ]
        self.absorbing = frozenset(absorbing)

    def reset(self, seed: Optional[int] = None) -> int:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.t = 0
        self.done = False
        self.timed_out = False
        self.state = int(self.rng.choice(self.mdp.n_states, p=self.mdp.rho))
        return self.state

    def step(self, action: int):
        if self.done:
            raise EnvContractError("step() called on a finished episode; call reset() first")
        s, a = self.state, int(action)
        reward = float(self.mdp.reward[s, a])
        self.state = int(self.rng.choice(self.mdp.n_states, p=self.mdp.transition[s, a]))
        self.t += 1
        terminal = self.state in self.absorbing
        self.timed_out = (not terminal) and self.t >= self.max_episode_steps
        self.done = terminal or self.timed_out
        return self.state, reward, self.done
