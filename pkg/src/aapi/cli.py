"""Command line: ``aapi train | attack | report | verify``.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint as ckpt
from .agents.ppo import PpoConfig, oa_ppo_train
from .agents.td3 import Td3Config, oa_td3_train
from .attacks import AttackCriticConfig, AttackSpec, evaluate, exact_attack_values, train_attack_critic
from .envs import CONTINUOUS_ENVS, ENV_PARAMS, TABULAR_ENVS, make_env, make_mdp
from .errors import (
    ConfigError,
    DegenerateBaselineError,
    DivergenceError,
    NonConvergenceError,
    NonFiniteError,
)
from .mdp import policy_iteration
from .nn import DenseNet
from .oapi import oa_policy_iteration
from .report import aggregate, curve_data, validate, write_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NONCONVERGENCE = 0, 2, 3, 4
LOG_FIELDS = ("step", "episode", "nominal_return", "critic_loss", "oa_critic_loss", "conflict_rate")
CONFIG_CLASSES = {"oa_td3": Td3Config, "td3": Td3Config, "oa_ppo": PpoConfig, "ppo": PpoConfig}
TABULAR_PARAMS = ("tol", "max_iters")


# -- config handling -----------------------------------------------------------

def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    validate(doc, "config")
    env = doc.get("env")
    if env is not None:
        unknown = set(env.get("params", {})) - set(ENV_PARAMS[env["id"]])
        if unknown:
            raise ConfigError(f"unknown key {sorted(unknown)[0]!r}", "env.params")
    algo = doc.get("algorithm")
    if algo is not None:
        params = algo.get("params", {})
        allowed = TABULAR_PARAMS if algo["name"] in ckpt.TABULAR_ALGOS else \
            [f.name for f in dataclasses.fields(CONFIG_CLASSES[algo["name"]]) if f.name not in ("oa", "seed")]
        unknown = set(params) - set(allowed)
        if unknown:
            raise ConfigError(f"unknown key {sorted(unknown)[0]!r}", "algorithm.params")
        tabular_env = env is not None and env["id"] in TABULAR_ENVS
        if (algo["name"] in ckpt.TABULAR_ALGOS) != tabular_env and env is not None:
            raise ConfigError(f"{algo['name']} cannot run on {env['id']}", "algorithm.name")
    return doc


def _require(doc: dict, key: str) -> dict:
    if key not in doc:
        raise ConfigError(f"missing {key!r} block", key)
    return doc[key]


def output_root(args, doc: dict) -> Path:
    if args.out:
        return Path(args.out)
    if doc.get("run", {}).get("out"):
        return Path(doc["run"]["out"])
    return Path(os.environ.get("AAPI_OUT", "runs"))


def seeds_for(args, doc: dict) -> list:
    if args.seed is not None:
        return [args.seed]
    return list(doc.get("run", {}).get("seeds", [0]))


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_log(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in LOG_FIELDS])


def read_log(path: Path) -> list:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]


# -- train ---------------------------------------------------------------------

def _train_one(doc: dict, seed: int, out: Path) -> Path:
    env_block, algo = doc["env"], doc["algorithm"]
    env_id, env_params = env_block["id"], dict(env_block.get("params", {}))
    name, params = algo["name"], dict(algo.get("params", {}))
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"env": {"id": env_id, "params": env_params}, "algorithm": {"name": name},
                "run": {"seeds": [seed], "out": str(out)}}
    if name in ckpt.TABULAR_ALGOS:
        mdp = _build(make_mdp, env_id, env_params)
        tol, max_iters = params.get("tol", 1e-10), params.get("max_iters", 1000)
        resolved["algorithm"]["params"] = {"tol": tol, "max_iters": max_iters}
        _write_json(out / "config.resolved.json", resolved)
        solver = oa_policy_iteration if name == "oapi" else policy_iteration
        try:
            pi, q, trace = solver(mdp, tol=tol, max_iters=max_iters)
        except NonConvergenceError as exc:
            _write_trace(out / "trace.csv", exc.trace or [])
            exc.trace_path = out / "trace.csv"
            raise
        _write_trace(out / "trace.csv", trace)
        ckpt.save(out / "checkpoint.json",
                  ckpt.tabular_document(name, env_id, env_params, mdp, pi, q, seed, len(trace)))
        return out
    cls = CONFIG_CLASSES[name]
    try:
        cfg = cls(**params, seed=seed, oa=name.startswith("oa_"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "algorithm.params") from None
    resolved["algorithm"]["params"] = {k: v for k, v in cfg.to_dict().items() if k not in ("oa", "seed")}
    _write_json(out / "config.resolved.json", resolved)
    env = _build(make_env, env_id, env_params)
    if cls is Td3Config:
        result = oa_td3_train(env, cfg)
        doc_out = ckpt.td3_document(name, env_id, env_params, result)
    else:
        result = oa_ppo_train(env, cfg)
        doc_out = ckpt.ppo_document(name, env_id, env_params, result)
    write_log(out / "train_log.csv", result.log)
    ckpt.save(out / "checkpoint.json", doc_out)
    return out


def _build(factory, env_id, params):
    try:
        return factory(env_id, **params)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc), "env.params") from None


def _write_trace(path: Path, trace) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "policy_changed"])
        for t in trace:
            w.writerow([t.iteration, repr(float(t.objective)), int(t.policy_changed)])


def _run_dirs(root: Path, seeds: list) -> list:
    return [root] if len(seeds) == 1 else [root / f"seed_{s}" for s in seeds]


def cmd_train(args) -> int:
    doc = load_config(args.config)
    _require(doc, "env")
    _require(doc, "algorithm")
    seeds = seeds_for(args, doc)
    dirs = _run_dirs(output_root(args, doc), seeds)
    try:
        if args.jobs > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                done = list(pool.map(_train_one, [doc] * len(seeds), seeds, dirs))
        else:
            done = [_train_one(doc, s, d) for s, d in zip(seeds, dirs)]
    except NonConvergenceError as exc:
        print(f"not converged: {exc} (trace: {getattr(exc, 'trace_path', '?')})", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    for d in done:
        print(f"checkpoint {d / 'checkpoint.json'}")
        log = d / ("trace.csv" if doc["algorithm"]["name"] in ckpt.TABULAR_ALGOS else "train_log.csv")
        print(f"log {log}")
    return EXIT_OK


# -- attack ------------------------------------------------------------------------

def _attack_critics(policy, env, attacks, doc, seed) -> dict:
    """Critics for the gradient attacks: trained on the bench against the
    frozen policy (``min_q``: plain Q, ``min_oa_q``: Q_adv) or loaded."""
    critics = {}
    steps = doc.get("run", {}).get("critic_steps", AttackCriticConfig.total_steps)
    for spec in attacks:
        if spec.kind not in ("min_q", "min_oa_q") or spec.kind in critics:
            continue
        if spec.critic_source != "bench":
            critics[spec.kind] = ckpt_critic(spec.critic_source)
            continue
        mode = "oa" if spec.kind == "min_oa_q" else "standard"
        cfg = AttackCriticConfig(total_steps=steps, seed=seed)
        critics[spec.kind] = train_attack_critic(policy, env, spec.epsilon, mode, cfg)
    return critics


def ckpt_critic(path):
    """A critic network stored as diff-engine JSON, either bare or as the
    ``oa_critic`` of a training checkpoint."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read critic {path}: {exc}", "attacks.critic_source") from None
    if "networks" in doc:
        doc = doc["networks"].get("oa_critic") or doc["networks"].get("critic1")
    return DenseNet.from_json(doc)


def cmd_attack(args) -> int:
    doc = load_config(args.config)
    path = args.checkpoint or doc.get("run", {}).get("checkpoint")
    if not path:
        raise ConfigError("no checkpoint given", "run.checkpoint")
    c = ckpt.load(path)
    env_block = doc.get("env")
    if env_block is not None and env_block["id"] != c.env_id:
        raise ConfigError(f"config env {env_block['id']!r} does not match checkpoint env {c.env_id!r}",
                          "env.id")
    attacks = [AttackSpec(**a) for a in doc.get("attacks", [{"kind": "nominal"}])]
    if c.is_tabular and any(a.critic_source != "bench" for a in attacks):
        raise ConfigError("tabular attacks use exact critics", "attacks.critic_source")
    run = doc.get("run", {})
    seeds = seeds_for(args, doc)
    episodes = run.get("episodes", 10)
    env = _build(make_env, c.env_id, c.env_params)
    if c.is_tabular:
        mdp = c.extra["mdp"]
        reports, exact = [], []
        for spec in attacks:
            reports.append(evaluate(c.policy, env, spec, episodes, seeds, discount=mdp.gamma,
                                    policy_id=str(path)))
            exact.append(float(mdp.rho @ exact_attack_values(mdp, c.policy, spec)))
    else:
        policy = c.policy.mean_net if hasattr(c.policy, "mean_net") else c.policy
        critics = _attack_critics(policy, env, attacks, doc, seeds[0])
        reports = [evaluate(policy, env, spec, episodes, seeds, critics=critics, policy_id=str(path))
                   for spec in attacks]
        exact = None
    out = output_root(args, doc)
    write_report(out, c.env_id, c.algorithm, str(path), reports, exact)
    _write_json(out / "config.resolved.json", {**doc, "run": {**run, "seeds": seeds, "out": str(out),
                                                              "episodes": episodes,
                                                              "checkpoint": str(path)}})
    print((out / "table.txt").read_text(), end="")
    return EXIT_OK


# -- report --------------------------------------------------------------------

def _train_log_for(run_dir) -> Optional[Path]:
    """Training log of a run: beside its summary, or beside the checkpoint
    the summary was computed from."""
    run = Path(run_dir)
    candidates = [run / "train_log.csv"]
    policy = json.loads((run / "summary.json").read_text()).get("policy", "")
    if policy:
        candidates.append(Path(policy).parent / "train_log.csv")
    return next((p for p in candidates if p.exists()), None)


def cmd_report(args) -> int:
    doc = load_config(args.config) if args.config else {}
    block = dict(doc.get("report", {}))
    if args.runs:
        block["runs"] = args.runs
    for key in ("z0", "z1"):
        val = getattr(args, key)
        if val is not None:
            try:
                block[key] = float(val)
            except ValueError:
                block[key] = val
    if not block.get("runs"):
        raise ConfigError("no run directories given", "report.runs")
    attack = block.get("attack", "nominal")
    rows = aggregate(block["runs"], block.get("z0"), block.get("z1"), attack)
    out = output_root(args, doc)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "env", "algorithm", "attack", "mean", "n_score"])
        for r in rows:
            w.writerow([r["run"], r["env"], r["algorithm"], r["attack"], repr(r["mean"]), repr(r["n_score"])])
    logs = [read_log(p) for p in map(_train_log_for, block["runs"]) if p is not None]
    if logs:
        from .report import resolve_baseline

        z0 = resolve_baseline(block.get("z0"), "z0", attack)
        z1 = resolve_baseline(block.get("z1"), "z1", attack)
        with open(out / "plot_data.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "mean_n_score", "stderr"])
            for r in curve_data(logs, z0, z1):
                w.writerow([repr(r["step"]), repr(r["mean"]), repr(r["stderr"])])
    scores = [r["n_score"] for r in rows]
    print(f"runs {len(rows)}  mean n-score {float(np.mean(scores))!r}")
    for r in rows:
        print(f"{r['run']}: mean {r['mean']!r}  n-score {r['n_score']!r}")
    return EXIT_OK


# -- verify --------------------------------------------------------------------

def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(seed=args.seed or 0)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aapi", description="Adversary-aware policy iteration workbench")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seeds")
        sp.add_argument("--out", default=None, help="output directory (default: $AAPI_OUT or ./runs)")
        sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    common(sub.add_parser("train", help="train a policy"))
    sp = sub.add_parser("attack", help="evaluate a checkpoint under attacks")
    common(sp)
    sp.add_argument("--checkpoint", default=None)
    sp = sub.add_parser("report", help="aggregate runs into n-scores")
    common(sp, config_required=False)
    sp.add_argument("runs", nargs="*", help="run directories holding summary.json")
    sp.add_argument("--z0", default=None, help="random-baseline run directory or value")
    sp.add_argument("--z1", default=None, help="reference run directory or value")
    common(sub.add_parser("verify", help="run the tabular property suites"), config_required=False)
    return p


COMMANDS = {"train": cmd_train, "attack": cmd_attack, "report": cmd_report, "verify": cmd_verify}


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteError, DivergenceError, DegenerateBaselineError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NonConvergenceError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
