"""Action attacks, bench-trained attack critics, evaluation under attack and
n-score normalisation.

Continuous attacks perturb the executed action inside an l-inf ball.  On
finite AA-MDPs every attack is a per-state distribution over the shared
perturbation offsets, which makes its value exactly computable.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .agents.buffer import ReplayBuffer
from .agents.pgd import DEFAULT_ATTACK_STEPS, DEFAULT_TRAIN_STEPS, pgd_min_delta
from .agents.td3 import make_critic, make_streams, regress, smoothed_target_actions
from .errors import ConfigError, DegenerateBaselineError, NonFiniteError
from .mdp import FiniteAAMdp, TabularPolicy, policy_evaluation
from .nn import AdamState, DenseNet, forward, soft_update
from .oapi import oa_policy_evaluation, perturbed_expectation, values_under_adversary

KINDS = ("nominal", "random", "biggest", "min_q", "min_oa_q")
GRADIENT_KINDS = ("min_q", "min_oa_q")


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    epsilon: float = 0.0
    pgd_steps: int = DEFAULT_ATTACK_STEPS
    critic_source: str = "bench"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}", "kind")
        if self.epsilon < 0:
            raise ConfigError("attack epsilon must be >= 0", "epsilon")
        if self.kind in GRADIENT_KINDS and self.pgd_steps < 1:
            raise ConfigError("gradient attacks need pgd_steps >= 1", "pgd_steps")

    @property
    def effective_epsilon(self) -> float:
        return 0.0 if self.kind == "nominal" else self.epsilon

    @property
    def label(self) -> str:
        return self.kind if self.kind == "nominal" else f"{self.kind}@{self.epsilon:g}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttackSpec":
        return cls(**d)


def _critic_for(attack: AttackSpec, critics) -> DenseNet:
    if isinstance(critics, DenseNet):
        return critics
    net = None if critics is None else critics.get(attack.kind)
    if net is None:
        raise ConfigError(f"{attack.kind} attack needs a critic", "critics")
    return net


def perturb(attack: AttackSpec, s: np.ndarray, a: np.ndarray, rng: Optional[np.random.Generator] = None,
            critics: Union[None, DenseNet, Mapping[str, DenseNet]] = None) -> np.ndarray:
    """Executed action ``clip(a + delta)`` for a continuous action ``a``."""
    a = np.asarray(a, dtype=float)
    eps = attack.effective_epsilon
    if attack.kind == "nominal" or eps == 0:
        return np.clip(a, -1.0, 1.0)
    if attack.kind == "random":
        delta = rng.uniform(-eps, eps, a.shape)
    elif attack.kind == "biggest":
        delta = eps * rng.choice(np.array([-1.0, 1.0]), a.shape)
    else:
        net = _critic_for(attack, critics)
        delta = pgd_min_delta(net, s, a, eps, attack.pgd_steps)
    return np.clip(a + delta, -1.0, 1.0)


# -- finite AA-MDPs -----------------------------------------------------------

def attack_critic_table(mdp: FiniteAAMdp, pi: TabularPolicy, kind: str) -> np.ndarray:
    """Exact critic a gradient attack would minimise: ``Q_pi`` for min_q,
    ``Q_adv`` for min_oa_q."""
    if kind == "min_q":
        return policy_evaluation(pi, mdp, tol=1e-12)
    if kind == "min_oa_q":
        return oa_policy_evaluation(pi, mdp, tol=1e-12)[0]
    raise ValueError(f"{kind} does not use a critic")


def offset_probabilities(attack: AttackSpec, mdp: FiniteAAMdp, pi: TabularPolicy,
                         q: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-state distribution over ``mdp.offsets`` for ``attack``, shape (S, K).

    ``random`` is uniform over all admissible offsets, ``biggest`` uniform
    over those of largest l-inf norm, the gradient attacks pick the offset
    minimising the expected critic value (lowest index on ties).
    """
    mdp = mdp.with_epsilon(attack.effective_epsilon)
    S, K = mdp.n_states, mdp.n_offsets
    probs = np.zeros((S, K))
    if attack.kind == "nominal" or K == 1:
        probs[:, 0] = 1.0
    elif attack.kind == "random":
        probs[:] = 1.0 / K
    elif attack.kind == "biggest":
        norms = np.abs(mdp.offsets).max(-1)
        far = np.isclose(norms, norms.max(), rtol=0.0, atol=1e-12)
        probs[:, far] = 1.0 / far.sum()
    else:
        if q is None:
            q = attack_critic_table(mdp, pi, attack.kind)
        probs[np.arange(S), perturbed_expectation(q, pi, mdp).argmin(-1)] = 1.0
    return probs


def exact_attack_values(mdp: FiniteAAMdp, pi: TabularPolicy, attack: AttackSpec,
                        q: Optional[np.ndarray] = None) -> np.ndarray:
    """State values of ``pi`` under ``attack`` by a linear solve (no sampling)."""
    probs = offset_probabilities(attack, mdp, pi, q)
    return values_under_adversary(mdp.with_epsilon(attack.effective_epsilon), pi, probs)


# -- attack critics for continuous policies -----------------------------------

@dataclass
class AttackCriticConfig:
    total_steps: int = 20_000
    learning_starts: int = 1000
    batch_size: int = 64
    gamma: float = 0.99
    tau: float = 0.005
    learning_rate: float = 3e-4
    exploration_noise: float = 0.1
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    pgd_steps: int = DEFAULT_TRAIN_STEPS
    buffer_size: int = 100_000
    hidden: tuple = (64, 64)
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def attack_critic_targets(batch, policy_t: DenseNet, q_t: DenseNet, eps: float,
                          cfg: AttackCriticConfig, rng: np.random.Generator) -> np.ndarray:
    """``r + gamma (1 - d) min_delta q_t(s', a' + delta)`` with smoothed ``a'``."""
    a2 = smoothed_target_actions(policy_t, batch.s2, cfg.policy_noise, cfg.noise_clip, rng)
    _, q_min = pgd_min_delta(q_t, batch.s2, a2, eps, cfg.pgd_steps, return_value=True)
    return batch.r + cfg.gamma * (1.0 - batch.d) * q_min


def train_attack_critic(policy: DenseNet, env, eps: float, mode: str = "oa",
                        cfg: Optional[AttackCriticConfig] = None) -> DenseNet:
    """Fit a critic for a frozen deterministic ``policy``.

    ``mode="oa"`` learns ``Q_adv``: after the warm-up it acts around the PGD
    worst case ``mu(s) + delta*`` and regresses on adversarial targets.
    ``mode="standard"`` learns the plain ``Q`` of the policy from unperturbed
    targets.  Both add Gaussian exploration noise, so at ``eps = 0`` the two
    modes coincide.
    """
    if mode not in ("oa", "standard"):
        raise ConfigError(f"unknown critic mode {mode!r}", "mode")
    cfg = cfg or AttackCriticConfig()
    rngs = make_streams(cfg.seed, ("critic", "env", "explore", "buffer", "smoothing"))
    target_eps = eps if mode == "oa" else 0.0
    q = make_critic(env.obs_dim, env.act_dim, rngs["critic"], cfg.hidden)
    q_t = q.copy()
    opt = AdamState.like(q, cfg.learning_rate)
    buf = ReplayBuffer(cfg.buffer_size, env.obs_dim, env.act_dim, rngs["buffer"])
    obs = env.reset(seed=int(rngs["env"].integers(2**31)))
    for t in range(cfg.total_steps):
        mu = forward(policy, obs)[0]
        if mode == "oa" and t >= cfg.learning_starts:
            mu = mu + pgd_min_delta(q, obs, mu, eps, cfg.pgd_steps)
        a = np.clip(mu + rngs["explore"].normal(0.0, cfg.exploration_noise, mu.shape), -1.0, 1.0)
        obs2, r, done = env.step(a)
        buf.add(obs, a, r, obs2, done and not env.timed_out)
        obs = env.reset() if done else obs2
        if t < cfg.learning_starts:
            continue
        batch = buf.sample(cfg.batch_size)
        y = attack_critic_targets(batch, policy, q_t, target_eps, cfg, rngs["smoothing"])
        loss = regress(q, opt, batch.s, batch.a, y)
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite attack-critic loss at step {t}")
        soft_update(q_t, q, cfg.tau)
    return q


# -- evaluation ----------------------------------------------------------------

@dataclass
class EvalReport:
    returns: np.ndarray
    seeds: list
    attack: AttackSpec
    policy_id: str = ""
    episodes_per_seed: int = 0

    @property
    def n(self) -> int:
        return len(self.returns)

    @property
    def mean(self) -> float:
        return float(np.mean(self.returns))

    @property
    def stderr(self) -> float:
        if self.n < 2:
            return 0.0
        return float(np.std(self.returns, ddof=1) / np.sqrt(self.n))

    def summary(self) -> dict:
        return {"attack": self.attack.to_dict(), "policy": self.policy_id,
                "mean": self.mean, "stderr": self.stderr, "n": self.n}


def as_policy(policy) -> Callable:
    """Deterministic action function for nets, Gaussian policies and callables."""
    if isinstance(policy, DenseNet):
        return lambda obs: forward(policy, obs)[0]
    if hasattr(policy, "mean") and hasattr(policy, "mean_net"):
        return policy.mean
    if callable(policy):
        return policy
    raise TypeError(f"cannot act with {type(policy).__name__}")


def _tabular_episode(mdp, pi, env, s, probs, rng, discount):
    total, scale, done = 0.0, 1.0, False
    K = mdp.n_offsets
    while not done:
        a = int(rng.choice(mdp.n_actions, p=pi.probs[s])) if not pi.is_deterministic else int(pi.actions[s])
        k = int(rng.choice(K, p=probs[s])) if probs[s].max() < 1.0 else int(probs[s].argmax())
        s, r, done = env.step(int(mdp.shift[a, k]))
        total += scale * r
        scale *= discount
    return total


def evaluate(policy, env, attack: AttackSpec, episodes: int, seeds: Sequence[int],
             critics=None, discount: float = 1.0, policy_id: str = "") -> EvalReport:
    """Roll out ``policy`` under ``attack``; the policy sees true states and the
    perturbation touches the executed action only.

    ``discount`` weights rewards by ``discount ** t`` (1 gives plain returns).
    On a finite-MDP env ``policy`` is a ``TabularPolicy`` and ``critics`` may
    hold an exact Q table for gradient attacks.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    tabular = isinstance(policy, TabularPolicy)
    if tabular:
        mdp = env.mdp.with_epsilon(attack.effective_epsilon)
        probs = offset_probabilities(attack, mdp, policy,
                                     critics if isinstance(critics, np.ndarray) else None)
    else:
        act = as_policy(policy)
        if attack.kind in GRADIENT_KINDS and attack.effective_epsilon > 0:
            _critic_for(attack, critics)
    returns = []
    for seed in sorted(seeds):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
        for ep in range(episodes):
            obs = env.reset() if ep else env.reset(seed=int(seed))
            if tabular:
                returns.append(_tabular_episode(mdp, policy, env, obs, probs, rng, discount))
                continue
            total, scale, done = 0.0, 1.0, False
            while not done:
                a = perturb(attack, obs, act(obs), rng, critics)
                obs, r, done = env.step(a)
                total += scale * r
                scale *= discount
            returns.append(total)
    return EvalReport(np.array(returns), sorted(int(s) for s in seeds), attack, policy_id, episodes)


def n_score(z: float, z0: float, z1: float) -> float:
    """``(z - z0) / (z1 - z0)``, unclamped."""
    if z1 == z0:
        raise DegenerateBaselineError(f"baselines coincide (z0 = z1 = {z0!r})")
    return (z - z0) / (z1 - z0)
