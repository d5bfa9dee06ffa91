"""JSON checkpoints for tabular and neural policies."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .agents.ppo import GaussianPolicy
from .errors import ConfigError
from .mdp import FiniteAAMdp, TabularPolicy
from .nn import DenseNet

FORMAT_VERSION = 1
TABULAR_ALGOS = ("oapi", "pi")
TD3_ALGOS = ("oa_td3", "td3")
PPO_ALGOS = ("oa_ppo", "ppo")


@dataclass
class Checkpoint:
    algorithm: str
    env_id: str
    env_params: dict
    epsilon: float
    omega: Optional[float]
    seed: int
    step: int
    policy: object  # TabularPolicy | DenseNet | GaussianPolicy
    extra: dict

    @property
    def is_tabular(self) -> bool:
        return self.algorithm in TABULAR_ALGOS


def tabular_document(algorithm, env_id, env_params, mdp: FiniteAAMdp, pi: TabularPolicy,
                     q: np.ndarray, seed: int, iterations: int) -> dict:
    return {
        "format_version": FORMAT_VERSION, "algorithm": algorithm, "env_id": env_id,
        "env_params": env_params, "epsilon": float(mdp.epsilon), "omega": None, "seed": seed,
        "step": iterations, "mdp": mdp.to_json(), "policy": pi.actions.tolist(),
        "q": np.asarray(q).tolist(),
    }


def td3_document(algorithm, env_id, env_params, result) -> dict:
    cfg = result.config
    nets = {"actor": result.actor.to_json(), "critic1": result.critics[0].to_json(),
            "critic2": result.critics[1].to_json(),
            "oa_critic": result.oa_critic.to_json() if result.oa_critic is not None else None}
    return {
        "format_version": FORMAT_VERSION, "algorithm": algorithm, "env_id": env_id,
        "env_params": env_params, "epsilon": cfg.epsilon, "omega": cfg.omega, "seed": cfg.seed,
        "step": result.steps, "config": cfg.to_dict(), "networks": nets,
    }


def ppo_document(algorithm, env_id, env_params, result) -> dict:
    cfg = result.config
    nets = {"policy_mean": result.policy.mean_net.to_json(), "value": result.value_net.to_json(),
            "oa_critic": result.oa_critic.to_json() if result.oa_critic is not None else None}
    return {
        "format_version": FORMAT_VERSION, "algorithm": algorithm, "env_id": env_id,
        "env_params": env_params, "epsilon": cfg.epsilon, "omega": cfg.omega, "seed": cfg.seed,
        "step": result.steps, "config": cfg.to_dict(), "networks": nets,
        "log_std": result.policy.log_std.tolist(),
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save(path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(doc))
    return path


def load(path) -> Checkpoint:
    doc = json.loads(Path(path).read_text())
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"checkpoint format {version!r} is not supported (expected {FORMAT_VERSION})",
                          "format_version")
    algo = doc["algorithm"]
    extra = {}
    if algo in TABULAR_ALGOS:
        mdp = FiniteAAMdp.from_json(doc["mdp"])
        policy = TabularPolicy.deterministic(doc["policy"], mdp.n_actions)
        extra = {"mdp": mdp, "q": np.array(doc["q"], dtype=float)}
    elif algo in TD3_ALGOS:
        nets = doc["networks"]
        policy = DenseNet.from_json(nets["actor"])
        extra = {k: DenseNet.from_json(v) for k, v in nets.items() if k != "actor" and v is not None}
    elif algo in PPO_ALGOS:
        nets = doc["networks"]
        policy = GaussianPolicy(DenseNet.from_json(nets["policy_mean"]), np.array(doc["log_std"]))
        extra = {k: DenseNet.from_json(v) for k, v in nets.items() if k != "policy_mean" and v is not None}
    else:
        raise ConfigError(f"unknown algorithm {algo!r}", "algorithm")
    return Checkpoint(algo, doc["env_id"], doc.get("env_params", {}), doc["epsilon"], doc["omega"],
                      doc["seed"], doc["step"], policy, extra)
