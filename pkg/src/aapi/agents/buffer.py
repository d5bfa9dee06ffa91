from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    d: np.ndarray

    def __len__(self):
        return len(self.r)


class ReplayBuffer:
    """Fixed-capacity ring of ``(s, a, r, s', d)`` with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, rng: np.random.Generator):
        self.capacity = int(capacity)
        self.rng = rng
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, obs_dim))
        self.d = np.zeros(capacity)
        self.pos = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, d) -> None:
        i = self.pos
        self.s[i] = s
        self.a[i] = np.clip(a, -1.0, 1.0)
        self.r[i] = r
        self.s2[i] = s2
        self.d[i] = float(d)
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, self.size, batch_size)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.d[idx])
