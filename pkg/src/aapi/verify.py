"""Property suites for the exact tabular machinery, run by ``aapi verify``."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .mdp import TabularPolicy, policy_iteration, random_mdp
from .oapi import (
    adversary_route_values,
    exhaustive_maximin,
    oa_bellman_backup,
    oa_policy_evaluation,
    oa_policy_iteration,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _random_instance(rng, max_states, max_actions, action_dim=1):
    S = int(rng.integers(1, max_states + 1))
    A = int(rng.integers(1, max_actions + 1))
    eps = float(rng.choice([0.0, rng.uniform(0, 2.0), 2.0]))
    return random_mdp(rng, S, A, epsilon=eps)


def _random_policy(rng, S, A):
    p = rng.random((S, A)) ** 3
    return TabularPolicy(p / p.sum(1, keepdims=True))


def check_contraction(rng, cases: int = 200) -> CheckResult:
    t0 = time.perf_counter()
    worst = -np.inf
    for _ in range(cases):
        mdp = _random_instance(rng, 20, 5)
        pi = _random_policy(rng, mdp.n_states, mdp.n_actions)
        q1, q2 = rng.normal(0, 10, (2, mdp.n_states, mdp.n_actions))
        lhs = np.abs(oa_bellman_backup(q1, pi, mdp) - oa_bellman_backup(q2, pi, mdp)).max()
        worst = max(worst, lhs - mdp.gamma * np.abs(q1 - q2).max())
    return CheckResult("contraction", bool(worst <= 1e-12), f"max slack {worst:.3e}",
                       time.perf_counter() - t0)


def check_adversary_route(rng, cases: int = 100):
    """Adversary-MDP equivalence plus per-state monotonicity along OA-PI."""
    t0 = time.perf_counter()
    gap, drop = 0.0, 0.0
    for _ in range(cases):
        mdp = _random_instance(rng, 10, 4)
        pi = _random_policy(rng, mdp.n_states, mdp.n_actions)
        _, v = oa_policy_evaluation(pi, mdp, tol=1e-11)
        gap = max(gap, float(np.abs(v - adversary_route_values(mdp, pi)).max()))
        _, _, trace = oa_policy_iteration(mdp, tol=1e-11)
        for a, b in zip(trace, trace[1:]):
            drop = max(drop, float(np.max(a.values - b.values)))
    dt = time.perf_counter() - t0
    return (CheckResult("adversary-route equivalence", gap <= 1e-8, f"max gap {gap:.3e}", dt),
            CheckResult("monotone improvement", drop <= 1e-10, f"max per-state drop {drop:.3e}", dt))


def check_optimality(rng, cases: int = 50) -> CheckResult:
    t0 = time.perf_counter()
    gap = 0.0
    for _ in range(cases):
        mdp = _random_instance(rng, 4, 3)
        _, _, trace = oa_policy_iteration(mdp, tol=1e-11)
        _, best = exhaustive_maximin(mdp)
        gap = max(gap, abs(trace[-1].objective - best))
    return CheckResult("maximin optimality", gap <= 1e-8, f"max gap {gap:.3e}", time.perf_counter() - t0)


def check_reduction(rng, cases: int = 50) -> CheckResult:
    t0 = time.perf_counter()
    same, gap = True, 0.0
    for _ in range(cases):
        mdp = _random_instance(rng, 10, 4).with_epsilon(0.0)
        p1, q1, _ = policy_iteration(mdp, tol=1e-12)
        p2, q2, _ = oa_policy_iteration(mdp, tol=1e-12)
        same &= p1 == p2
        gap = max(gap, float(np.abs(q1 - q2).max()))
    return CheckResult("reduction at epsilon 0", bool(same and gap <= 1e-10),
                       f"policies equal: {same}, max Q gap {gap:.3e}", time.perf_counter() - t0)


def run_all(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    results = [check_contraction(rng)]
    results.extend(check_adversary_route(rng))
    results.append(check_optimality(rng))
    results.append(check_reduction(rng))
    return results
