"""TD3 with an optional adversary-aware critic (OA-TD3).

With ``oa=True`` a third critic regresses on targets whose next action is
perturbed by the PGD worst case, and the actor follows a mix of the nominal
and the adversary-aware policy gradients, optionally de-conflicted by
gradient surgery.  With ``oa=False`` the loop is plain TD3.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import NonFiniteError
from ..nn import AdamState, DenseNet, adam_step, backward, forward, soft_update
from .buffer import Batch, ReplayBuffer
from .pgd import pgd_min_delta
from .surgery import gradient_surgery_combine

STREAMS = ("actor", "critic1", "critic2", "oa_critic", "env", "explore", "buffer", "smoothing")


@dataclass
class Td3Config:
    epsilon: float = 0.2
    omega: float = 0.5
    pgd_steps: int = 16
    pgd_step_size: Optional[float] = None
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    policy_delay: int = 2
    exploration_noise: float = 0.1
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    learning_starts: int = 1000
    total_steps: int = 30_000
    buffer_size: int = 100_000
    learning_rate: float = 3e-4
    hidden: tuple = (64, 64)
    seed: int = 0
    gradient_surgery: bool = True
    oa: bool = True

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.pgd_steps < 1:
            raise ValueError("pgd_steps must be >= 1")
        if self.pgd_step_size is not None and self.pgd_step_size <= 0:
            raise ValueError("pgd_step_size must be positive")

    @property
    def eta(self) -> float:
        return self.pgd_step_size if self.pgd_step_size is not None else self.epsilon / self.pgd_steps

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class Td3Nets:
    actor: DenseNet
    actor_t: DenseNet
    q1: DenseNet
    q2: DenseNet
    q1_t: DenseNet
    q2_t: DenseNet
    q_adv: Optional[DenseNet] = None
    q_adv_t: Optional[DenseNet] = None

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, cfg: Td3Config, rngs: dict) -> "Td3Nets":
        actor = DenseNet.mlp(obs_dim, act_dim, rngs["actor"], cfg.hidden, "tanh", "tanh")
        q1 = make_critic(obs_dim, act_dim, rngs["critic1"], cfg.hidden)
        q2 = make_critic(obs_dim, act_dim, rngs["critic2"], cfg.hidden)
        nets = cls(actor, actor.copy(), q1, q2, q1.copy(), q2.copy())
        if cfg.oa:
            nets.q_adv = make_critic(obs_dim, act_dim, rngs["oa_critic"], cfg.hidden)
            nets.q_adv_t = nets.q_adv.copy()
        return nets


def make_critic(obs_dim: int, act_dim: int, rng: np.random.Generator, hidden=(64, 64)) -> DenseNet:
    return DenseNet.mlp(obs_dim + act_dim, 1, rng, hidden, "relu", "identity")


def make_streams(seed: int, names=STREAMS) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(ss) for name, ss in zip(names, children)}


def critic_value(q_net: DenseNet, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    return forward(q_net, np.concatenate([s, np.clip(a, -1.0, 1.0)], axis=1))[0][:, 0]


def smoothed_target_actions(actor_t: DenseNet, s2: np.ndarray, noise_std: float,
                            noise_clip: float, rng: np.random.Generator) -> np.ndarray:
    a2 = forward(actor_t, s2)[0]
    noise = np.clip(rng.normal(0.0, noise_std, a2.shape), -noise_clip, noise_clip)
    return np.clip(a2 + noise, -1.0, 1.0)


def adversarial_target(q_t: DenseNet, batch: Batch, a2: np.ndarray, gamma: float,
                       eps: float, K: int, eta: float) -> np.ndarray:
    """``r + gamma (1 - d) min_delta q_t(s', a' + delta)`` with the min found by PGD."""
    _, q_min = pgd_min_delta(q_t, batch.s2, a2, eps, K, eta, return_value=True)
    return batch.r + gamma * (1.0 - batch.d) * q_min


def td3_targets(batch: Batch, nets: Td3Nets, cfg: Td3Config, rng: np.random.Generator):
    """Clipped double-Q target ``y`` and adversary-aware target ``y_adv``
    (``None`` when the net set has no adversary-aware critic)."""
    a2 = smoothed_target_actions(nets.actor_t, batch.s2, cfg.policy_noise, cfg.noise_clip, rng)
    q_next = np.minimum(critic_value(nets.q1_t, batch.s2, a2), critic_value(nets.q2_t, batch.s2, a2))
    y = batch.r + cfg.gamma * (1.0 - batch.d) * q_next
    y_adv = None
    if nets.q_adv_t is not None:
        y_adv = adversarial_target(nets.q_adv_t, batch, a2, cfg.gamma, cfg.epsilon,
                                   cfg.pgd_steps, cfg.eta)
    return y, y_adv


def regress(net: DenseNet, opt: AdamState, s: np.ndarray, a: np.ndarray, y: np.ndarray) -> float:
    """One Adam step on ``mean((net(s, a) - y)^2)``; returns the loss before the step."""
    q, tape = forward(net, np.concatenate([s, a], axis=1))
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    grad, _ = backward(tape, (2.0 / len(y)) * err[:, None])
    net.set_params(adam_step(net.theta, grad, opt))
    return loss


def action_gradient(q_net: DenseNet, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``d mean_b q(s_b, clip(a_b)) / d a`` (zero where clipping is active)."""
    n_obs = s.shape[1]
    inside = (a >= -1.0) & (a <= 1.0)
    _, tape = forward(q_net, np.concatenate([s, np.clip(a, -1.0, 1.0)], axis=1))
    _, gx = backward(tape, np.full((len(s), 1), 1.0 / len(s)), need_params=False)
    return gx[:, n_obs:] * inside


def _check(step: int, **values):
    for name, v in values.items():
        if v is not None and not np.all(np.isfinite(v)):
            raise NonFiniteError(f"non-finite {name} at step {step}")


@dataclass
class TrainResult:
    actor: DenseNet
    critics: tuple
    oa_critic: Optional[DenseNet]
    log: list = field(default_factory=list)
    config: Optional[object] = None
    steps: int = 0


class Td3Trainer:
    """Holds the full TD3 / OA-TD3 state so tests can step through updates."""

    def __init__(self, env, cfg: Td3Config):
        self.env = env
        self.cfg = cfg
        self.rngs = make_streams(cfg.seed)
        self.nets = Td3Nets.create(env.obs_dim, env.act_dim, cfg, self.rngs)
        lr = cfg.learning_rate
        self.opt_actor = AdamState.like(self.nets.actor, lr)
        self.opt_q1 = AdamState.like(self.nets.q1, lr)
        self.opt_q2 = AdamState.like(self.nets.q2, lr)
        self.opt_adv = AdamState.like(self.nets.q_adv, lr) if cfg.oa else None
        self.buffer = ReplayBuffer(cfg.buffer_size, env.obs_dim, env.act_dim, self.rngs["buffer"])
        self.step_count = 0
        self.log = []
        self.last_direction = None
        self._losses = {"critic": np.nan, "oa_critic": np.nan}
        self._actor_updates = 0
        self._conflicts = 0

    def act(self, obs: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        rng = self.rngs["explore"]
        if self.step_count < cfg.learning_starts:
            return rng.uniform(-1.0, 1.0, self.env.act_dim)
        a = forward(self.nets.actor, obs)[0]
        return np.clip(a + rng.normal(0.0, cfg.exploration_noise, a.shape), -1.0, 1.0)

    def update(self) -> None:
        cfg, nets, step = self.cfg, self.nets, self.step_count
        batch = self.buffer.sample(cfg.batch_size)
        y, y_adv = td3_targets(batch, nets, cfg, self.rngs["smoothing"])
        _check(step, target=y, oa_target=y_adv)
        l1 = regress(nets.q1, self.opt_q1, batch.s, batch.a, y)
        l2 = regress(nets.q2, self.opt_q2, batch.s, batch.a, y)
        self._losses["critic"] = 0.5 * (l1 + l2)
        _check(step, critic_loss=self._losses["critic"])
        if cfg.oa:
            self._losses["oa_critic"] = regress(nets.q_adv, self.opt_adv, batch.s, batch.a, y_adv)
            _check(step, oa_critic_loss=self._losses["oa_critic"])
        if step % cfg.policy_delay == 0:
            self.update_actor(batch.s)
            soft_update(nets.actor_t, nets.actor, cfg.tau)
            soft_update(nets.q1_t, nets.q1, cfg.tau)
            soft_update(nets.q2_t, nets.q2, cfg.tau)
            if cfg.oa:
                soft_update(nets.q_adv_t, nets.q_adv, cfg.tau)

    def policy_gradients(self, s: np.ndarray):
        """Ascent directions ``(grad Q1, grad Q_adv)`` for the actor parameters;
        the second is ``None`` for plain TD3."""
        cfg, nets = self.cfg, self.nets
        a_pi, tape_a = forward(nets.actor, s)
        g_q, _ = backward(tape_a, action_gradient(nets.q1, s, a_pi))
        if not cfg.oa:
            return g_q, None
        delta = pgd_min_delta(nets.q_adv, s, a_pi, cfg.epsilon, cfg.pgd_steps, cfg.eta)
        g_adv, _ = backward(tape_a, action_gradient(nets.q_adv, s, a_pi + delta))
        return g_q, g_adv

    def update_actor(self, s: np.ndarray) -> None:
        cfg = self.cfg
        g_q, g_adv = self.policy_gradients(s)
        if g_adv is None:
            direction = g_q
        else:
            self._actor_updates += 1
            self._conflicts += int(g_q @ g_adv < 0)
            if cfg.gradient_surgery:
                direction = gradient_surgery_combine(g_q, g_adv, cfg.omega)
            else:
                direction = cfg.omega * g_q + (1.0 - cfg.omega) * g_adv
        _check(self.step_count, actor_gradient=direction)
        self.last_direction = direction
        actor = self.nets.actor
        actor.set_params(adam_step(actor.theta, -direction, self.opt_actor))

    def run(self, total_steps: Optional[int] = None) -> TrainResult:
        cfg, env = self.cfg, self.env
        total = cfg.total_steps if total_steps is None else total_steps
        obs = env.reset(seed=int(self.rngs["env"].integers(2**31)))
        ep_return, episode = 0.0, 0
        for _ in range(total):
            a = self.act(obs)
            obs2, r, done = env.step(a)
            self.buffer.add(obs, a, r, obs2, done and not env.timed_out)
            ep_return += r
            obs = obs2
            if self.step_count >= cfg.learning_starts:
                self.update()
            self.step_count += 1
            if done:
                episode += 1
                rate = self._conflicts / self._actor_updates if self._actor_updates else 0.0
                self.log.append({
                    "step": self.step_count, "episode": episode, "nominal_return": ep_return,
                    "critic_loss": self._losses["critic"], "oa_critic_loss": self._losses["oa_critic"],
                    "conflict_rate": rate,
                })
                self._actor_updates = self._conflicts = 0
                ep_return = 0.0
                obs = env.reset()
        nets = self.nets
        return TrainResult(nets.actor, (nets.q1, nets.q2), nets.q_adv, self.log, cfg, self.step_count)


def oa_td3_train(env, cfg: Td3Config) -> TrainResult:
    """Train TD3 (``cfg.oa=False``) or OA-TD3 (``cfg.oa=True``) on ``env``."""
    return Td3Trainer(env, cfg).run()
