"""Exact optimal-adversary-aware evaluation, improvement and policy iteration.

Two independent routes compute the value of a policy under its worst-case
action adversary:

* iterating the adversary-aware backup (``oa_policy_evaluation``), and
* building the adversary's own MDP, in which the agent policy is part of the
  environment, and solving it exactly (``adversary_route_values``).

``exhaustive_maximin`` brute-forces the agent side on tiny instances.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InstanceTooLargeError, NonConvergenceError
from .mdp import (
    FiniteAAMdp,
    TabularPolicy,
    TraceEntry,
    _fixed_point,
    argmax_rows,
    check_dims,
    exact_values,
    solve_exact,
    tie_tolerance,
)

MAX_ENUMERATION = 10**5


def perturbed_expectation(q: np.ndarray, pi: TabularPolicy, mdp: FiniteAAMdp) -> np.ndarray:
    """``W[s, k] = sum_a pi(a|s) q(s, a (+) offset_k)``, shape (S, K)."""
    return np.einsum("sa,sak->sk", pi.probs, q[:, mdp.shift])


def robust_values(q: np.ndarray, pi: TabularPolicy, mdp: FiniteAAMdp) -> np.ndarray:
    """``V(s) = min_k E_{a~pi} q(s, a (+) k)``: value when the adversary moves next."""
    return perturbed_expectation(q, pi, mdp).min(-1)


def oa_bellman_backup(q_adv: np.ndarray, pi: TabularPolicy, mdp: FiniteAAMdp) -> np.ndarray:
    check_dims(q_adv, pi, mdp)
    return mdp.reward + mdp.gamma * mdp.transition @ robust_values(q_adv, pi, mdp)


def oa_policy_evaluation(pi: TabularPolicy, mdp: FiniteAAMdp, tol: float = 1e-10,
                         max_iters: int = 1_000_000):
    """Fixed point of the adversary-aware backup, started from zero.

    Returns ``(q_adv, v)`` where ``v`` is the state value under the optimal
    adversary.
    """
    check_dims(None, pi, mdp)
    q, _ = _fixed_point(lambda q: oa_bellman_backup(q, pi, mdp),
                        (mdp.n_states, mdp.n_actions), tol, max_iters)
    return q, robust_values(q, pi, mdp)


def robust_action_values(q_adv: np.ndarray, mdp: FiniteAAMdp) -> np.ndarray:
    """``min_k q(s, a (+) k)`` for every (s, a): the value of committing to ``a``."""
    return q_adv[:, mdp.shift].min(-1)


def oa_policy_improvement(q_adv: np.ndarray, mdp: FiniteAAMdp, atol: float = 0.0,
                          incumbent: Optional[np.ndarray] = None) -> TabularPolicy:
    """Maximin greedy step; ties go to the lowest action index."""
    check_dims(q_adv, None, mdp)
    choice = argmax_rows(robust_action_values(q_adv, mdp), atol, incumbent)
    return TabularPolicy.deterministic(choice, mdp.n_actions)


def oa_policy_iteration(mdp: FiniteAAMdp, tol: float = 1e-10, max_iters: int = 1000,
                        init: Optional[TabularPolicy] = None):
    """Alternate adversary-aware evaluation and maximin improvement until the
    policy stops changing.

    Returns ``(policy, q_adv, trace)``; ``trace[k].objective`` is
    ``E_rho[V]`` of the k-th evaluated policy.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    pi = init or TabularPolicy.deterministic(np.zeros(mdp.n_states, int), mdp.n_actions)
    atol = tie_tolerance(tol, mdp.gamma)
    trace = []
    for it in range(1, max_iters + 1):
        q, v = oa_policy_evaluation(pi, mdp, tol)
        incumbent = pi.actions if pi.is_deterministic else None
        new = oa_policy_improvement(q, mdp, atol, incumbent)
        changed = new != pi
        trace.append(TraceEntry(it, float(mdp.rho @ v), changed, v))
        if not changed:
            return pi, q, trace
        pi = new
    raise NonConvergenceError(f"policy not stable after {max_iters} iterations", trace)


@dataclass(frozen=True, eq=False)
class AdversaryMdp:
    """The MDP faced by an adversary that treats the agent policy as environment.

    Its actions are the perturbation offsets of the source MDP; rewards are the
    negated agent rewards.
    """

    transition: np.ndarray  # (S, K, S)
    reward: np.ndarray  # (S, K)
    gamma: float
    rho: np.ndarray
    offsets: np.ndarray  # (K, d)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]


def build_adversary_mdp(mdp: FiniteAAMdp, pi: TabularPolicy) -> AdversaryMdp:
    check_dims(None, pi, mdp)
    # (S, A, K) executed action for each sampled action and offset
    executed = np.broadcast_to(mdp.shift, (mdp.n_states,) + mdp.shift.shape)
    s_idx = np.arange(mdp.n_states)[:, None, None]
    r_exec = mdp.reward[s_idx, executed]  # (S, A, K)
    p_exec = mdp.transition[s_idx, executed]  # (S, A, K, S)
    reward = -np.einsum("sa,sak->sk", pi.probs, r_exec)
    transition = np.einsum("sa,sakt->skt", pi.probs, p_exec)
    return AdversaryMdp(transition, reward, mdp.gamma, np.array(mdp.rho), np.array(mdp.offsets))


def solve_adversary(adv: AdversaryMdp):
    """Optimal deterministic adversary ``(offset index per state, adversary values)``."""
    return solve_exact(adv.transition, adv.reward, adv.gamma)


def adversary_route_values(mdp: FiniteAAMdp, pi: TabularPolicy) -> np.ndarray:
    """Agent state values under the optimal adversary, via the adversary MDP."""
    _, v_adv = solve_adversary(build_adversary_mdp(mdp, pi))
    return -v_adv


def values_under_adversary(mdp: FiniteAAMdp, pi: TabularPolicy,
                           adversary_probs: np.ndarray) -> np.ndarray:
    """Exact agent state values when a fixed (possibly stochastic) adversary
    picks offsets with probabilities ``adversary_probs`` of shape (S, K)."""
    adv = build_adversary_mdp(mdp, pi)
    return -exact_values(adv.transition, adv.reward, adv.gamma, np.asarray(adversary_probs))


def decision_states(mdp: FiniteAAMdp) -> np.ndarray:
    """States where the choice of action matters (some action differs in
    reward or transition row from action 0)."""
    same_p = np.all(mdp.transition == mdp.transition[:, :1, :], axis=(1, 2))
    same_r = np.all(mdp.reward == mdp.reward[:, :1], axis=1)
    return np.flatnonzero(~(same_p & same_r))


def exhaustive_maximin(mdp: FiniteAAMdp, limit: int = MAX_ENUMERATION):
    """Best deterministic policy against its optimal adversary by enumeration.

    Returns ``(policy, objective)`` with ``objective = E_rho[V]``.  States
    where every action behaves identically are pinned to action 0, so the
    count is ``A ** len(decision_states(mdp))``.  The first policy (in
    lexicographic order of action tuples) attaining the best objective within
    1e-12 wins.
    """
    free = decision_states(mdp)
    count = mdp.n_actions ** len(free)
    if count > limit:
        raise InstanceTooLargeError(count, limit)
    best, best_obj = None, -np.inf
    actions = np.zeros(mdp.n_states, dtype=np.int64)
    for choice in itertools.product(range(mdp.n_actions), repeat=len(free)):
        actions[free] = choice
        pi = TabularPolicy.deterministic(actions, mdp.n_actions)
        obj = float(mdp.rho @ adversary_route_values(mdp, pi))
        if obj > best_obj + 1e-12:
            best, best_obj = pi, obj
    return best, best_obj
