"""Finite action-adversarial MDPs and the standard Bellman machinery.

Actions live on a finite set of embeddings in ``[-1, 1]^d``.  An l-infinity
perturbation of radius ``epsilon`` can move an action to any other action whose
embedding is within ``epsilon`` of it; that set is the action's neighborhood.

Perturbations are also indexed as *offsets*: the distinct embedding
differences of length at most ``epsilon``.  One offset applies to every
action (``a (+) delta``), which is what lets a single perturbation be shared
across the actions a stochastic policy might sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, DivergenceError, NonConvergenceError

NEIGHBOR_TOL = 1e-12
PROB_TOL = 1e-12


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteAAMdp:
    n_states: int
    action_embeddings: np.ndarray  # (A, d)
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    gamma: float
    rho: np.ndarray  # (S,)
    epsilon: float = 0.0

    def __post_init__(self):
        emb = np.array(self.action_embeddings, dtype=float)
        if emb.ndim == 1:
            emb = emb[:, None]
        object.__setattr__(self, "action_embeddings", _frozen(emb))
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "rho", _frozen(self.rho))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        self._validate()

    def _validate(self):
        S, A = self.n_states, self.n_actions
        if self.transition.shape != (S, A, S):
            raise DimensionError("transition", (S, A, S), self.transition.shape)
        if self.reward.shape != (S, A):
            raise DimensionError("reward", (S, A), self.reward.shape)
        if self.rho.shape != (S,):
            raise DimensionError("rho", (S,), self.rho.shape)
        if np.any(self.transition < 0) or np.any(np.abs(self.transition.sum(-1) - 1) > PROB_TOL):
            raise ValueError("transition rows must be probability vectors")
        if np.any(self.rho < 0) or abs(self.rho.sum() - 1) > PROB_TOL:
            raise ValueError("rho must be a probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if np.any(np.abs(self.action_embeddings) > 1.0 + NEIGHBOR_TOL):
            raise ValueError("action embeddings must lie in [-1, 1]^d")
        if not np.all(np.isfinite(self.reward)):
            raise ValueError("rewards must be finite")

    @property
    def n_actions(self) -> int:
        return self.action_embeddings.shape[0]

    @property
    def action_dim(self) -> int:
        return self.action_embeddings.shape[1]

    @cached_property
    def neighborhoods(self) -> tuple[tuple[int, ...], ...]:
        """``N_eps(a)`` for every action, in increasing index order."""
        emb = self.action_embeddings
        dist = np.abs(emb[:, None, :] - emb[None, :, :]).max(-1)
        return tuple(
            tuple(int(j) for j in np.flatnonzero(dist[a] <= self.epsilon + NEIGHBOR_TOL))
            for a in range(self.n_actions)
        )

    @cached_property
    def offsets(self) -> np.ndarray:
        """Admissible perturbation vectors, zero offset first, then lexicographic."""
        emb = self.action_embeddings
        diffs = (emb[None, :, :] - emb[:, None, :]).reshape(-1, self.action_dim)
        keep = np.abs(diffs).max(-1) <= self.epsilon + NEIGHBOR_TOL
        uniq = np.unique(np.round(diffs[keep], 12), axis=0)
        nonzero = uniq[np.abs(uniq).max(-1) > NEIGHBOR_TOL]
        return _frozen(np.vstack([np.zeros((1, self.action_dim)), nonzero]))

    @property
    def n_offsets(self) -> int:
        return self.offsets.shape[0]

    @cached_property
    def shift(self) -> np.ndarray:
        """``shift[a, k]`` is the action executed when offset ``k`` hits action ``a``.

        The perturbed embedding is clipped to the box and snapped to the nearest
        neighbor of ``a`` (Euclidean, lowest index on ties), so the result is
        always inside ``N_eps(a)``.
        """
        emb = self.action_embeddings
        out = np.empty((self.n_actions, self.n_offsets), dtype=np.int64)
        for a in range(self.n_actions):
            cand = np.array(self.neighborhoods[a])
            for k, delta in enumerate(self.offsets):
                target = np.clip(emb[a] + delta, -1.0, 1.0)
                d = np.linalg.norm(emb[cand] - target, axis=-1)
                out[a, k] = cand[int(np.argmin(d))]
        out.setflags(write=False)
        return out

    def with_epsilon(self, epsilon: float) -> "FiniteAAMdp":
        return FiniteAAMdp(
            self.n_states, self.action_embeddings, self.transition, self.reward,
            self.gamma, self.rho, epsilon,
        )

    def to_json(self) -> dict:
        return {
            "n_states": self.n_states,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "action_embeddings": self.action_embeddings.tolist(),
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "rho": self.rho.tolist(),
        }

    @classmethod
    def from_json(cls, doc) -> "FiniteAAMdp":
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls(
            n_states=int(doc["n_states"]),
            action_embeddings=doc["action_embeddings"],
            transition=doc["transition"],
            reward=doc["reward"],
            gamma=doc["gamma"],
            rho=doc["rho"],
            epsilon=doc.get("epsilon", 0.0),
        )


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Per-state action distribution; deterministic policies are one-hot rows."""

    probs: np.ndarray  # (S, A)

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2:
            raise DimensionError("policy", "(states, actions)", p.shape)
        if np.any(p < 0) or np.any(np.abs(p.sum(-1) - 1) > PROB_TOL):
            raise ValueError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", p)

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=np.int64)
        probs = np.zeros((len(actions), n_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0) | (self.probs == 1)))

    @property
    def actions(self) -> np.ndarray:
        if not self.is_deterministic:
            raise ValueError("stochastic policy has no single action per state")
        return self.probs.argmax(-1)

    def __eq__(self, other):
        return isinstance(other, TabularPolicy) and np.array_equal(self.probs, other.probs)

    __hash__ = None


def check_dims(q: Optional[np.ndarray], pi: Optional[TabularPolicy], mdp: FiniteAAMdp):
    S, A = mdp.n_states, mdp.n_actions
    if q is not None:
        q = np.asarray(q)
        if q.ndim != 2 or q.shape[0] != S:
            raise DimensionError("q.states", S, q.shape[0] if q.ndim else None)
        if q.shape[1] != A:
            raise DimensionError("q.actions", A, q.shape[1])
    if pi is not None:
        if pi.n_states != S:
            raise DimensionError("policy.states", S, pi.n_states)
        if pi.n_actions != A:
            raise DimensionError("policy.actions", A, pi.n_actions)


def bellman_backup(q: np.ndarray, pi: TabularPolicy, mdp: FiniteAAMdp) -> np.ndarray:
    """One application of the fixed-policy Bellman operator."""
    check_dims(q, pi, mdp)
    v = np.einsum("sa,sa->s", pi.probs, q)
    return mdp.reward + mdp.gamma * mdp.transition @ v


def _fixed_point(op, shape, tol: float, max_iters: int):
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros(shape)
    for k in range(1, max_iters + 1):
        nxt = op(q)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(f"non-finite values after {k} backups")
        step = np.max(np.abs(nxt - q)) if q.size else 0.0
        q = nxt
        if step < tol:
            return q, k
    raise NonConvergenceError(f"no fixed point within {max_iters} backups (last step {step:.3e})")


def policy_evaluation(pi: TabularPolicy, mdp: FiniteAAMdp, tol: float = 1e-10,
                      max_iters: int = 1_000_000) -> np.ndarray:
    """Iterate the Bellman backup from zero until the sup-norm step drops below ``tol``."""
    check_dims(None, pi, mdp)
    q, _ = _fixed_point(lambda q: bellman_backup(q, pi, mdp),
                        (mdp.n_states, mdp.n_actions), tol, max_iters)
    return q


def argmax_rows(values: np.ndarray, atol: float = 0.0,
                incumbent: Optional[np.ndarray] = None) -> np.ndarray:
    """Row-wise argmax, lowest index among entries within ``atol`` of the max.

    With ``incumbent`` given, an incumbent action that is within ``atol`` of the
    max is kept; this stops policy iteration from cycling on numerically tied
    actions.
    """
    best = values.max(-1, keepdims=True)
    ok = values >= best - atol
    choice = ok.argmax(-1)
    if incumbent is not None:
        keep = ok[np.arange(len(values)), incumbent]
        choice = np.where(keep, incumbent, choice)
    return choice


def greedy_improve(q: np.ndarray, atol: float = 0.0) -> TabularPolicy:
    q = np.asarray(q, dtype=float)
    return TabularPolicy.deterministic(argmax_rows(q, atol), q.shape[1])


def tie_tolerance(tol: float, gamma: float) -> float:
    """Slack under which two evaluated action values count as tied."""
    return 4.0 * tol / (1.0 - gamma)


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    objective: float
    policy_changed: bool
    values: np.ndarray


def policy_iteration(mdp: FiniteAAMdp, tol: float = 1e-10, max_iters: int = 1000,
                     init: Optional[TabularPolicy] = None):
    """Vanilla policy iteration (nominal values, no adversary).

    Returns ``(policy, q, trace)``.
    """
    pi = init or TabularPolicy.deterministic(np.zeros(mdp.n_states, int), mdp.n_actions)
    atol = tie_tolerance(tol, mdp.gamma)
    trace = []
    for it in range(1, max_iters + 1):
        q = policy_evaluation(pi, mdp, tol)
        v = np.einsum("sa,sa->s", pi.probs, q)
        incumbent = pi.actions if pi.is_deterministic else None
        new = TabularPolicy.deterministic(argmax_rows(q, atol, incumbent), mdp.n_actions)
        changed = new != pi
        trace.append(TraceEntry(it, float(mdp.rho @ v), changed, v))
        if not changed:
            return pi, q, trace
        pi = new
    raise NonConvergenceError(f"policy not stable after {max_iters} iterations", trace)


def exact_values(transition: np.ndarray, reward: np.ndarray, gamma: float,
                 policy_probs: np.ndarray) -> np.ndarray:
    """State values of a stationary policy by a direct linear solve."""
    p_pi = np.einsum("sa,sat->st", policy_probs, transition)
    r_pi = np.einsum("sa,sa->s", policy_probs, reward)
    return np.linalg.solve(np.eye(len(r_pi)) - gamma * p_pi, r_pi)


def solve_exact(transition: np.ndarray, reward: np.ndarray, gamma: float,
                max_iters: int = 10_000):
    """Optimal deterministic policy of a finite MDP by Howard policy iteration.

    Evaluation uses a linear solve, so the result is exact up to round-off.
    Returns ``(actions, values)``.
    """
    S, A = reward.shape
    actions = np.zeros(S, dtype=np.int64)
    eye = np.eye(A)
    for _ in range(max_iters):
        v = exact_values(transition, reward, gamma, eye[actions])
        q = reward + gamma * transition @ v
        atol = 1e-12 * max(1.0, float(np.max(np.abs(q))))
        new = argmax_rows(q, atol, actions)
        if np.array_equal(new, actions):
            return actions, v
        actions = new
    raise NonConvergenceError("exact policy iteration did not stabilize")


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int,
               epsilon: float = 0.0, gamma: Optional[float] = None,
               action_dim: int = 1, sparsity: float = 0.0) -> FiniteAAMdp:
    """Random instance on a regular action grid.

    ``action_dim=1`` spaces the actions evenly on [-1, 1]; ``action_dim=2``
    needs a square action count and builds the product grid.
    """
    if action_dim == 1:
        emb = np.linspace(-1.0, 1.0, n_actions)[:, None] if n_actions > 1 else np.zeros((1, 1))
    elif action_dim == 2:
        side = int(round(np.sqrt(n_actions)))
        if side * side != n_actions:
            raise ValueError("2-D grids need a square number of actions")
        ticks = np.linspace(-1.0, 1.0, side) if side > 1 else np.zeros(1)
        emb = np.array([(x, y) for x in ticks for y in ticks])
    else:
        raise ValueError("action_dim must be 1 or 2")
    P = rng.random((n_states, n_actions, n_states))
    if sparsity > 0:
        P *= rng.random(P.shape) >= sparsity
        P[..., 0] += (P.sum(-1) == 0)
    P /= P.sum(-1, keepdims=True)
    R = rng.uniform(-1.0, 1.0, (n_states, n_actions))
    rho = rng.random(n_states)
    rho /= rho.sum()
    if gamma is None:
        gamma = float(rng.uniform(0.5, 0.95))
    return FiniteAAMdp(n_states, emb, P, R, gamma, rho, epsilon)
