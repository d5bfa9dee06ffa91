"""Attack-report files: per-episode CSV rows, JSON summaries and a text table
that parses back into the same summary."""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import jsonschema
import numpy as np

from .attacks import EvalReport, n_score
from .errors import ConfigError

ROW_FIELDS = ("env", "algorithm", "attack", "epsilon", "seed", "episode", "return")
TABLE_MARK = "# meta "


def load_schema(name: str) -> dict:
    return json.loads(resources.files("aapi").joinpath("schemas", f"{name}.json").read_text())


def validate(doc: dict, name: str) -> None:
    try:
        jsonschema.validate(doc, load_schema(name))
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path)
        raise ConfigError(exc.message, path) from None


def episode_rows(env: str, algorithm: str, reports: Iterable[EvalReport]) -> list:
    rows = []
    for rep in reports:
        i = 0
        for seed in rep.seeds:
            for ep in range(rep.episodes_per_seed):
                rows.append({"env": env, "algorithm": algorithm, "attack": rep.attack.kind,
                             "epsilon": rep.attack.effective_epsilon, "seed": seed,
                             "episode": ep, "return": float(rep.returns[i])})
                i += 1
    return rows


def write_rows(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow([r["env"], r["algorithm"], r["attack"], repr(float(r["epsilon"])),
                        r["seed"], r["episode"], repr(float(r["return"]))])


def read_rows(path) -> list:
    with open(path, newline="") as fh:
        out = []
        for r in csv.DictReader(fh):
            out.append({**r, "epsilon": float(r["epsilon"]), "seed": int(r["seed"]),
                        "episode": int(r["episode"]), "return": float(r["return"])})
        return out


def summarize(env: str, algorithm: str, policy: str, reports: Sequence[EvalReport],
              exact: Optional[Sequence[Optional[float]]] = None) -> dict:
    rows = []
    for i, rep in enumerate(reports):
        row = {"kind": rep.attack.kind, "epsilon": float(rep.attack.effective_epsilon),
               "pgd_steps": int(rep.attack.pgd_steps), "mean": rep.mean, "stderr": rep.stderr,
               "n": rep.n}
        if exact is not None:
            row["exact"] = None if exact[i] is None else float(exact[i])
        rows.append(row)
    seeds = reports[0].seeds if reports else []
    doc = {"format_version": 1, "env": env, "algorithm": algorithm, "policy": policy,
           "seeds": list(seeds), "rows": rows}
    if reports:
        doc["episodes"] = reports[0].episodes_per_seed
    validate(doc, "report")
    return doc


def _num(x) -> str:
    return "null" if x is None else repr(float(x))


def render_table(doc: dict) -> str:
    """Rows are attacks, the main column is ``mean ± stderr``.  The first line
    carries the non-row fields so ``parse_table`` can rebuild ``doc``."""
    meta = {k: v for k, v in doc.items() if k != "rows"}
    has_exact = any("exact" in r for r in doc["rows"])
    head = ["attack", "epsilon", "mean ± stderr", "n", "pgd_steps"] + (["exact"] if has_exact else [])
    body = []
    for r in doc["rows"]:
        cells = [r["kind"], _num(r["epsilon"]), f"{_num(r['mean'])} ± {_num(r['stderr'])}",
                 str(r["n"]), str(r["pgd_steps"])]
        if has_exact:
            cells.append(_num(r.get("exact")))
        body.append(cells)
    widths = [max(len(c) for c in col) for col in zip(head, *body)]
    fmt = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [TABLE_MARK + json.dumps(meta, sort_keys=True), fmt(head),
             "-+-".join("-" * w for w in widths)]
    lines += [fmt(c) for c in body]
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> dict:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(TABLE_MARK):
        raise ValueError("table is missing its metadata line")
    doc = json.loads(lines[0][len(TABLE_MARK):])
    head = [h.strip() for h in lines[1].split(" | ")]
    rows = []
    for ln in lines[3:]:
        if not ln.strip():
            continue
        cells = dict(zip(head, (c.strip() for c in ln.split(" | "))))
        mean, stderr = cells["mean ± stderr"].split(" ± ")
        row = {"kind": cells["attack"], "epsilon": float(cells["epsilon"]),
               "pgd_steps": int(cells["pgd_steps"]), "mean": float(mean),
               "stderr": float(stderr), "n": int(cells["n"])}
        if "exact" in cells:
            row["exact"] = None if cells["exact"] == "null" else float(cells["exact"])
        rows.append(row)
    doc["rows"] = rows
    return doc


def write_report(out_dir, env: str, algorithm: str, policy: str, reports: Sequence[EvalReport],
                 exact=None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "report.csv", episode_rows(env, algorithm, reports))
    doc = summarize(env, algorithm, policy, reports, exact)
    (out / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (out / "table.txt").write_text(render_table(doc))
    return doc


# -- aggregation ---------------------------------------------------------------

def summary_value(doc: dict, attack: str = "nominal") -> float:
    for row in doc["rows"]:
        if row["kind"] == attack:
            return float(row["mean"])
    raise ConfigError(f"summary has no {attack!r} row", "report.attack")


def load_summary(run_dir) -> dict:
    path = Path(run_dir) / "summary.json"
    if not path.exists():
        raise ConfigError(f"{path} not found", "report.runs")
    return json.loads(path.read_text())


def resolve_baseline(value, name: str, attack: str) -> float:
    if value is None:
        raise ConfigError(f"baseline {name.upper()} is missing", f"report.{name}")
    if isinstance(value, (int, float)):
        return float(value)
    path = Path(value)
    if not (path / "summary.json").exists():
        raise ConfigError(f"baseline {name.upper()} run {value} has no summary.json", f"report.{name}")
    return summary_value(load_summary(path), attack)


def aggregate(run_dirs: Sequence, z0, z1, attack: str = "nominal") -> list:
    """Per-run rows ``{run, env, algorithm, attack, mean, n_score}``."""
    z0v = resolve_baseline(z0, "z0", attack)
    z1v = resolve_baseline(z1, "z1", attack)
    rows = []
    for run in run_dirs:
        doc = load_summary(run)
        z = summary_value(doc, attack)
        rows.append({"run": str(run), "env": doc["env"], "algorithm": doc["algorithm"],
                     "attack": attack, "mean": z, "n_score": n_score(z, z0v, z1v)})
    return rows


def curve_data(logs: Sequence[Sequence[dict]], z0: float, z1: float, bins: int = 20) -> list:
    """Mean n-score of training returns per step bin across runs, with its
    standard error; rows ``{step, mean, stderr}``."""
    last = max((row["step"] for log in logs for row in log), default=0)
    if last == 0:
        return []
    edges = np.linspace(0, last, bins + 1)
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        per_run = []
        for log in logs:
            vals = [n_score(r["nominal_return"], z0, z1) for r in log if lo < r["step"] <= hi]
            if vals:
                per_run.append(float(np.mean(vals)))
        if per_run:
            se = float(np.std(per_run, ddof=1) / np.sqrt(len(per_run))) if len(per_run) > 1 else 0.0
            out.append({"step": float(hi), "mean": float(np.mean(per_run)), "stderr": se})
    return out
