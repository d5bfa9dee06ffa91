"""PPO with an optional adversary-aware critic (OA-PPO).

Each update collects a fixed-length rollout, fits the value net on GAE
returns, optionally fits ``Q_adv`` on adversarial one-step targets, then runs
clipped-surrogate epochs on the mixed advantage
``omega * A_norm + (1 - omega) * Q_adv(s, a + delta*)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import NonFiniteError
from ..nn import AdamState, DenseNet, adam_step, backward, clip_grad_norm, forward
from .pgd import pgd_min_delta
from .td3 import critic_value, make_critic, make_streams, regress

STREAMS = ("policy", "value", "oa_critic", "env", "sample", "value_mb", "oa_mb", "policy_mb")
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PpoConfig:
    epsilon: float = 0.2
    omega: float = 0.5
    gamma: float = 0.99
    gae_lambda: float = 0.95
    rollout_steps: int = 2048
    n_minibatches: int = 32
    update_epochs: int = 10
    surrogate_clip: float = 0.2
    max_grad_norm: float = 0.5
    learning_rate: float = 3e-4
    lr_decay: bool = True
    total_steps: int = 50_000
    pgd_steps: int = 16
    pgd_step_size: Optional[float] = None
    init_log_std: float = 0.0
    hidden: tuple = (64, 64)
    seed: int = 0
    oa: bool = True

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if not 0.0 < self.surrogate_clip < 1.0:
            raise ValueError("surrogate_clip must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.rollout_steps % self.n_minibatches:
            raise ValueError("rollout_steps must be divisible by n_minibatches")
        if self.pgd_steps < 1:
            raise ValueError("pgd_steps must be >= 1")

    @property
    def eta(self) -> float:
        return self.pgd_step_size if self.pgd_step_size is not None else self.epsilon / self.pgd_steps

    @property
    def n_updates(self) -> int:
        return max(1, self.total_steps // self.rollout_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def gae_advantages(rewards, values, dones, gamma: float, lam: float,
                   next_values=None, episode_ends=None):
    """Generalized advantage estimates and returns-to-go.

    ``dones`` marks true terminations (no bootstrap).  ``next_values[t]`` is
    ``V(s_{t+1})``; when omitted, ``values`` must have length ``T + 1`` and
    supplies it.  ``episode_ends`` marks where the recursion is cut, which
    also covers time-limit truncation; it defaults to ``dones``.
    """
    rewards = np.asarray(rewards, dtype=float)
    dones = np.asarray(dones, dtype=float)
    values = np.asarray(values, dtype=float)
    T = len(rewards)
    if next_values is None:
        if len(values) != T + 1:
            raise ValueError("values needs T + 1 entries when next_values is omitted")
        next_values = values[1:]
        values = values[:T]
    next_values = np.asarray(next_values, dtype=float)
    ends = dones if episode_ends is None else np.asarray(episode_ends, dtype=float)
    if not (len(values) == len(next_values) == len(dones) == len(ends) == T):
        raise ValueError("rewards, values, dones and episode_ends must be aligned")
    adv = np.empty(T)
    running = 0.0
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * (1.0 - dones[t]) * next_values[t] - values[t]
        running = delta + gamma * lam * (1.0 - ends[t]) * running
        adv[t] = running
    return adv, adv + values


class GaussianPolicy:
    """Diagonal Gaussian with a network mean and a state-independent log-std.

    ``theta`` concatenates the mean-net parameters and the log-std vector.
    """

    def __init__(self, mean_net: DenseNet, log_std: np.ndarray):
        self.mean_net = mean_net
        self.log_std = np.asarray(log_std, dtype=float).copy()

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, rng: np.random.Generator,
               hidden=(64, 64), init_log_std: float = 0.0) -> "GaussianPolicy":
        net = DenseNet.mlp(obs_dim, act_dim, rng, hidden, "tanh", "identity")
        return cls(net, np.full(act_dim, init_log_std))

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.mean_net.theta, self.log_std])

    def set_params(self, theta: np.ndarray) -> None:
        n = self.mean_net.n_params
        self.mean_net.set_params(theta[:n])
        self.log_std = np.array(theta[n:], dtype=float)

    def mean(self, obs: np.ndarray) -> np.ndarray:
        return forward(self.mean_net, obs)[0]

    def sample(self, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mu = self.mean(obs)
        return mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)

    def log_prob(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        mu = self.mean(obs)
        z = (actions - mu) / np.exp(self.log_std)
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(self.log_std) - 0.5 * len(self.log_std) * LOG_2PI

    def log_prob_with_tape(self, obs: np.ndarray, actions: np.ndarray):
        """Log-probs plus the context ``log_prob_grad`` needs."""
        mu, tape = forward(self.mean_net, obs)
        std = np.exp(self.log_std)
        z = (actions - mu) / std
        logp = -0.5 * np.sum(z * z, axis=1) - np.sum(self.log_std) - 0.5 * len(std) * LOG_2PI
        return logp, (tape, z, std)

    @staticmethod
    def log_prob_grad(ctx, upstream: np.ndarray) -> np.ndarray:
        """Gradient of ``sum_b upstream_b * log_prob_b`` w.r.t. ``theta``."""
        tape, z, std = ctx
        g_net, _ = backward(tape, upstream[:, None] * z / std)
        g_log_std = (upstream[:, None] * (z * z - 1.0)).sum(0)
        return np.concatenate([g_net, g_log_std])

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.mean_net.copy(), self.log_std)


def surrogate_weights(ratio: np.ndarray, adv: np.ndarray, clip: float) -> np.ndarray:
    """Per-sample ``d loss / d log_prob`` for ``loss = -mean(min(r A, clip(r) A))``."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    active = unclipped <= clipped
    return -np.where(active, unclipped, 0.0) / len(ratio)


@dataclass
class Rollout:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    ends: np.ndarray
    log_probs: np.ndarray


@dataclass
class PpoResult:
    policy: GaussianPolicy
    value_net: DenseNet
    oa_critic: Optional[DenseNet]
    log: list = field(default_factory=list)
    config: Optional[object] = None
    steps: int = 0


def _check(step: int, **values):
    for name, v in values.items():
        if v is not None and not np.all(np.isfinite(v)):
            raise NonFiniteError(f"non-finite {name} at step {step}")


class PpoTrainer:
    def __init__(self, env, cfg: PpoConfig):
        self.env = env
        self.cfg = cfg
        self.rngs = make_streams(cfg.seed, STREAMS)
        self.policy = GaussianPolicy.create(env.obs_dim, env.act_dim, self.rngs["policy"],
                                            cfg.hidden, cfg.init_log_std)
        self.value_net = DenseNet.mlp(env.obs_dim, 1, self.rngs["value"], cfg.hidden, "tanh", "identity")
        self.q_adv = make_critic(env.obs_dim, env.act_dim, self.rngs["oa_critic"], cfg.hidden) if cfg.oa else None
        lr = cfg.learning_rate
        self.opt_policy = AdamState.like(self.policy.theta, lr)
        self.opt_value = AdamState.like(self.value_net, lr)
        self.opt_adv = AdamState.like(self.q_adv, lr) if cfg.oa else None
        self.step_count = 0
        self.updates_done = 0
        self.log = []
        self.update_stats = []
        self._obs = None
        self._ep_return = 0.0
        self._episode = 0
        self._losses = {"critic": np.nan, "oa_critic": np.nan}

    def collect(self) -> Rollout:
        cfg, env = self.cfg, self.env
        n = cfg.rollout_steps
        if self._obs is None:
            self._obs = env.reset(seed=int(self.rngs["env"].integers(2**31)))
        obs = np.empty((n, env.obs_dim))
        next_obs = np.empty((n, env.obs_dim))
        actions = np.empty((n, env.act_dim))
        rewards, dones, ends = np.zeros(n), np.zeros(n), np.zeros(n)
        for t in range(n):
            obs[t] = self._obs
            a = self.policy.sample(self._obs, self.rngs["sample"])
            o2, r, done = env.step(a)
            actions[t], rewards[t], next_obs[t] = a, r, o2
            dones[t] = float(done and not env.timed_out)
            ends[t] = float(done)
            self._ep_return += r
            self.step_count += 1
            if done:
                self._episode += 1
                self.log.append({
                    "step": self.step_count, "episode": self._episode,
                    "nominal_return": self._ep_return, "critic_loss": self._losses["critic"],
                    "oa_critic_loss": self._losses["oa_critic"], "conflict_rate": np.nan,
                })
                self._ep_return = 0.0
                o2 = env.reset()
            self._obs = o2
        log_probs = self.policy.log_prob(obs, actions)
        return Rollout(obs, actions, rewards, next_obs, dones, ends, log_probs)

    def _minibatches(self, stream: str):
        cfg = self.cfg
        size = cfg.rollout_steps // cfg.n_minibatches
        for _ in range(cfg.update_epochs):
            perm = self.rngs[stream].permutation(cfg.rollout_steps)
            for i in range(cfg.n_minibatches):
                yield perm[i * size:(i + 1) * size]

    def _fit_value(self, obs, returns) -> float:
        losses = []
        for idx in self._minibatches("value_mb"):
            v, tape = forward(self.value_net, obs[idx])
            err = v[:, 0] - returns[idx]
            losses.append(float(np.mean(err * err)))
            grad, _ = backward(tape, (2.0 / len(idx)) * err[:, None])
            grad = clip_grad_norm(grad, self.cfg.max_grad_norm)
            self.value_net.set_params(adam_step(self.value_net.theta, grad, self.opt_value))
        return float(np.mean(losses))

    def oa_targets(self, ro: Rollout) -> np.ndarray:
        """``r + gamma (1 - d) min_delta Q_adv(s', mu(s') + delta)`` with PGD."""
        cfg = self.cfg
        a2 = self.policy.mean(ro.next_obs)
        _, q_min = pgd_min_delta(self.q_adv, ro.next_obs, a2, cfg.epsilon, cfg.pgd_steps,
                                 cfg.eta, return_value=True)
        return ro.rewards + cfg.gamma * (1.0 - ro.dones) * q_min

    def _fit_oa_critic(self, ro: Rollout) -> float:
        y = self.oa_targets(ro)
        a = np.clip(ro.actions, -1.0, 1.0)
        losses = [regress(self.q_adv, self.opt_adv, ro.obs[idx], a[idx], y[idx])
                  for idx in self._minibatches("oa_mb")]
        return float(np.mean(losses))

    def robust_term(self, ro: Rollout) -> np.ndarray:
        """``Q_adv(s, a + delta*)`` per sample, treated as a constant."""
        cfg = self.cfg
        delta = pgd_min_delta(self.q_adv, ro.obs, ro.actions, cfg.epsilon, cfg.pgd_steps, cfg.eta)
        return critic_value(self.q_adv, ro.obs, ro.actions + delta)

    def _fit_policy(self, ro: Rollout, adv: np.ndarray, robust: Optional[np.ndarray]):
        cfg = self.cfg
        omega = cfg.omega
        first_ratios = None
        clip_fracs = []
        for idx in self._minibatches("policy_mb"):
            a_hat = adv[idx]
            a_hat = (a_hat - a_hat.mean()) / (a_hat.std() + 1e-8)
            mixed = a_hat if robust is None else omega * a_hat + (1.0 - omega) * robust[idx]
            logp, ctx = self.policy.log_prob_with_tape(ro.obs[idx], ro.actions[idx])
            ratio = np.exp(logp - ro.log_probs[idx])
            if first_ratios is None:
                first_ratios = ratio
            clip_fracs.append(float(np.mean(np.abs(ratio - 1.0) > cfg.surrogate_clip)))
            w = surrogate_weights(ratio, mixed, cfg.surrogate_clip)
            grad = self.policy.log_prob_grad(ctx, w)
            _check(self.step_count, policy_gradient=grad)
            grad = clip_grad_norm(grad, cfg.max_grad_norm)
            self.policy.set_params(adam_step(self.policy.theta, grad, self.opt_policy))
        return first_ratios, float(np.mean(clip_fracs))

    def _set_lr(self) -> None:
        cfg = self.cfg
        frac = 1.0 - self.updates_done / cfg.n_updates if cfg.lr_decay else 1.0
        lr = cfg.learning_rate * frac
        for opt in (self.opt_policy, self.opt_value, self.opt_adv):
            if opt is not None:
                opt.lr = lr

    def update(self) -> dict:
        """One collect-and-fit cycle."""
        cfg = self.cfg
        self._set_lr()
        ro = self.collect()
        values = forward(self.value_net, ro.obs)[0][:, 0]
        next_values = forward(self.value_net, ro.next_obs)[0][:, 0]
        adv, returns = gae_advantages(ro.rewards, values, ro.dones, cfg.gamma, cfg.gae_lambda,
                                      next_values=next_values, episode_ends=ro.ends)
        self._losses["critic"] = self._fit_value(ro.obs, returns)
        _check(self.step_count, value_loss=self._losses["critic"])
        robust = None
        if cfg.oa:
            self._losses["oa_critic"] = self._fit_oa_critic(ro)
            _check(self.step_count, oa_critic_loss=self._losses["oa_critic"])
            robust = self.robust_term(ro)
        first_ratios, clip_frac = self._fit_policy(ro, adv, robust)
        self.updates_done += 1
        stats = {"step": self.step_count, "value_loss": self._losses["critic"],
                 "oa_critic_loss": self._losses["oa_critic"], "clip_fraction": clip_frac,
                 "first_ratios": first_ratios}
        self.update_stats.append(stats)
        return stats

    def run(self, n_updates: Optional[int] = None) -> PpoResult:
        for _ in range(self.cfg.n_updates if n_updates is None else n_updates):
            self.update()
        return PpoResult(self.policy, self.value_net, self.q_adv, self.log, self.cfg, self.step_count)


def oa_ppo_train(env, cfg: PpoConfig) -> PpoResult:
    """Train PPO (``cfg.oa=False``) or OA-PPO (``cfg.oa=True``) on ``env``."""
    return PpoTrainer(env, cfg).run()
