"""Single runs, the environment x objective grid, pooling and plot tables."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .config import BAND, UNIFORM, ConfigError, ScenarioConfig, config_from_dict
from .episode import run_episode
from .learn.scripted import FixedRatePlanner, KeepPlanner, scripted_policy
from .learn.train import (
    NeuralAgentPolicy,
    NeuralPlannerPolicy,
    PolicyBundle,
    TrainerConfig,
    train,
    trainer_config_from_dict,
)
from .metrics import OBJECTIVES
from .rng import child_seed

log = logging.getLogger(__name__)

ENVIRONMENTS = (BAND, UNIFORM)
GRID_CELLS = tuple((env, obj) for env in ENVIRONMENTS for obj in OBJECTIVES)
TRAIN = "train"
GRID_HEADER = ["index", "environment", "objective", "seed", "status", "run_dir", "error"]
POOLED_METRICS = ("productivity", "equality", "maximin")


class AggregateError(ValueError):
    """Run directories that cannot be pooled together."""


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    agents: str = TRAIN  # "train" or a scripted policy kind
    planner_rates: list[float] | None = None  # fixed schedule for runs without a learned planner
    greedy: bool = True

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.to_dict(), "trainer": dataclasses.asdict(self.trainer),
                "run": {"agents": self.agents, "planner_rates": self.planner_rates, "greedy": self.greedy}}


def experiment_from_dict(data: dict | None) -> ExperimentConfig:
    data = dict(data or {})
    if not set(data) & {"scenario", "trainer", "run"}:
        data = {"scenario": data}  # a bare scenario file
    unknown = set(data) - {"scenario", "trainer", "run"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    run = dict(data.get("run") or {})
    bad = set(run) - {"agents", "planner_rates", "greedy"}
    if bad:
        raise ConfigError(f"unknown key(s) in run: {sorted(bad)}")
    rates = run.get("planner_rates")
    if rates is not None and len(rates) != 7:
        raise ConfigError("run.planner_rates needs 7 entries")
    return ExperimentConfig(config_from_dict(data.get("scenario")),
                            trainer_config_from_dict(data.get("trainer")),
                            str(run.get("agents", TRAIN)),
                            None if rates is None else [float(r) for r in rates],
                            bool(run.get("greedy", True)))


def load_experiment(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path) as fh:
        return experiment_from_dict(yaml.safe_load(fh))


@dataclass
class RunSpec:
    environment: str
    objective: str
    seed: int
    out_dir: Path
    experiment: ExperimentConfig
    checkpoint: Path | None = None
    grid_index: int | None = None

    def scenario(self) -> ScenarioConfig:
        d = self.experiment.scenario.to_dict()
        d["layout"]["kind"] = self.environment
        if self.experiment.scenario.layout.regen_counts is None:
            d["layout"]["regen_counts"] = None  # per-kind defaults; explicit counts apply to every cell
        d["objective"] = self.objective
        return config_from_dict(d)


def cmd_run(spec: RunSpec) -> Path:
    """Train (or load, or script) the agents, then play one evaluation episode."""
    exp = spec.experiment
    cfg = spec.scenario()
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fixed = FixedRatePlanner(exp.planner_rates) if exp.planner_rates else KeepPlanner()
    if exp.agents == TRAIN or spec.checkpoint is not None:
        if spec.checkpoint is not None:
            bundle = PolicyBundle.load(spec.checkpoint, cfg, exp.trainer)
        else:
            bundle = train(cfg, exp.trainer, spec.seed, out_dir=out / "train").bundle
        agent = NeuralAgentPolicy(bundle, spec.seed, greedy=exp.greedy)
        planner = NeuralPlannerPolicy(bundle, spec.seed, greedy=exp.greedy) \
            if exp.trainer.phase2_iterations > 0 else fixed
    else:
        agent = scripted_policy(exp.agents, spec.seed)
        planner = fixed
    log_ = run_episode(cfg, spec.seed, agent, planner)
    log_.save(out / "episode")
    manifest = {
        "environment": spec.environment,
        "objective": spec.objective,
        "seed": spec.seed,
        "grid_index": spec.grid_index,
        "config_hash": cfg.digest(),
        "agents": exp.agents if spec.checkpoint is None else "checkpoint",
        "checkpoint": str(spec.checkpoint) if spec.checkpoint else None,
        "experiment": exp.to_dict(),
    }
    (out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


# -- grid ----------------------------------------------------------------------------------


def parse_cell(text: str) -> tuple[str, str]:
    env, sep, obj = text.partition("x")
    if not sep or env not in ENVIRONMENTS or obj not in OBJECTIVES:
        raise ConfigError(f"cell {text!r} is not ENVxOBJ with ENV in {ENVIRONMENTS} and OBJ in {OBJECTIVES}")
    return env, obj


def grid_specs(exp: ExperimentConfig, root_seed: int, out: Path,
               cells: list[str] | None = None) -> list[RunSpec]:
    wanted = {parse_cell(c) for c in cells} if cells else None
    specs = []
    for i, (env, obj) in enumerate(GRID_CELLS):
        if wanted is not None and (env, obj) not in wanted:
            continue
        specs.append(RunSpec(env, obj, child_seed(root_seed, i), out / f"{i:02d}_{env}_{obj}", exp,
                             grid_index=i))
    return specs


def _run_cell(spec: RunSpec) -> tuple[str, str]:
    try:
        cmd_run(spec)
        return "ok", ""
    except Exception as exc:  # a failed cell must not stop the grid
        log.error("cell %s/%s failed: %s", spec.environment, spec.objective, exc)
        return "failed", "".join(traceback.format_exception_only(type(exc), exc)).strip()


def cmd_grid(exp: ExperimentConfig, root_seed: int, out: str | Path, cells: list[str] | None = None,
             parallel: int = 1) -> list[dict]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    specs = grid_specs(exp, root_seed, out, cells)
    if parallel > 1 and len(specs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_cell, specs))
    else:
        results = [_run_cell(s) for s in specs]
    rows = []
    for spec, (status, err) in zip(specs, results):
        rows.append({"index": spec.grid_index, "environment": spec.environment, "objective": spec.objective,
                     "seed": spec.seed, "status": status, "run_dir": spec.out_dir.name, "error": err})
    with open(out / "grid.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=GRID_HEADER, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    (out / "grid.json").write_text(json.dumps({"root_seed": root_seed, "experiment": exp.to_dict(),
                                               "runs": rows}, indent=2, sort_keys=True) + "\n")
    return rows


# -- aggregation ---------------------------------------------------------------------------


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


@dataclass
class RunRecord:
    path: Path
    name: str
    environment: str
    objective: str
    seed: int
    episode_length: int
    order: int
    episode: Path
    curve: Path | None


def _load_run(path: Path, position: int) -> RunRecord:
    path = Path(path)
    episode = path / "episode" if (path / "episode").is_dir() else path
    man_path = episode / "manifest.json"
    if not man_path.exists():
        raise AggregateError(f"{path}: no episode manifest")
    man = json.loads(man_path.read_text())
    run = json.loads((path / "run.json").read_text()) if (path / "run.json").exists() else {}
    order = run.get("grid_index")
    curve = path / "train" / "curve.csv"
    return RunRecord(path, path.name, man["layout_kind"], man["objective"], int(man["seed"]),
                     int(man["episode_length"]), position if order is None else int(order), episode,
                     curve if curve.exists() else None)


def _pool(series: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    stack = np.stack(series)
    return stack.mean(axis=0), stack.std(axis=0)


def cmd_aggregate(run_dirs: list[str | Path], out: str | Path) -> Path:
    """Pool runs per environment and collect per-run tax-return and curve tables."""
    runs = [_load_run(Path(p), i) for i, p in enumerate(run_dirs)]
    lengths = {r.episode_length for r in runs}
    if len(lengths) > 1:
        detail = ", ".join(f"{r.name}={r.episode_length}" for r in runs)
        raise AggregateError(f"runs have different episode lengths ({detail}); refusing to pool")
    runs.sort(key=lambda r: (r.order, r.name))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    _write_csv(out / "runs.csv", ["order", "run", "environment", "objective", "seed", "episode_length"],
               [[r.order, r.name, r.environment, r.objective, r.seed, r.episode_length] for r in runs])

    metric_rows, resource_rows = [], []
    for env in ENVIRONMENTS:
        group = [r for r in runs if r.environment == env]
        if not group:
            continue
        metrics = [_read_csv(r.episode / "metrics.csv") for r in group]
        steps = [row["step"] for row in metrics[0]]
        for m in POOLED_METRICS:
            mean, std = _pool([np.array([float(row[m]) for row in rows]) for rows in metrics])
            metric_rows += [[env, s, m, mu, sd, len(group)] for s, mu, sd in zip(steps, mean, std)]
        resources = [_read_csv(r.episode / "resources.csv") for r in group]
        for res in ("wood", "stone", "iron"):
            mean, std = _pool([np.array([float(row[res]) for row in rows]) for rows in resources])
            resource_rows += [[env, s, res, mu, sd, len(group)] for s, mu, sd in zip(steps, mean, std)]
    _write_csv(out / "pooled_metrics.csv", ["environment", "step", "metric", "mean", "std", "n_runs"],
               metric_rows)
    _write_csv(out / "pooled_resources.csv",
               ["environment", "step", "resource", "mean_units", "std_units", "n_runs"], resource_rows)

    tax_rows, curve_rows = [], []
    for r in runs:
        for row in _read_csv(r.episode / "taxes.csv"):
            tax_rows.append([r.order, r.name, r.environment, r.objective, row["period"], row["agent"],
                             row["tax_return"]])
        if r.curve is not None:
            for row in _read_csv(r.curve):
                curve_rows.append([r.order, r.name, r.environment, r.objective, row["iteration"],
                                   row["mean_agent_reward"], row["mean_planner_reward"]])
    _write_csv(out / "tax_returns.csv",
               ["order", "run", "environment", "objective", "year", "agent", "tax_return"], tax_rows)
    _write_csv(out / "curves.csv", ["order", "run", "environment", "objective", "iteration",
                                    "mean_agent_reward", "mean_planner_reward"], curve_rows)
    return out


# -- plot tables ---------------------------------------------------------------------------

PLOT_SCHEMA: dict[str, dict[str, Any]] = {
    "fig4.csv": {
        "description": "Pooled map resource totals per environment over the episode.",
        "columns": {"step": "environment step (1-based, after the step)", "environment": "band | uniform",
                    "resource": "wood | stone | iron", "mean_units": "mean over pooled runs"},
    },
    "fig5.csv": {
        "description": "Pooled productivity, equality and maximin per environment.",
        "columns": {"step": "environment step", "environment": "band | uniform",
                    "metric": "productivity | equality | maximin", "mean": "mean over runs",
                    "std": "population standard deviation over runs"},
    },
    "fig6.csv": {
        "description": "Per-run tax returns for every agent and tax year, in grid order.",
        "columns": {"order": "grid index", "run": "run directory name", "environment": "band | uniform",
                    "objective": "planner objective", "year": "tax year index (0-based)",
                    "agent": "agent id", "tax_return": "coin returned to the agent"},
    },
    "fig10.csv": {
        "description": "Average episode reward per training iteration for agents and the planner.",
        "columns": {"order": "grid index", "run": "run directory name", "environment": "band | uniform",
                    "objective": "planner objective", "iteration": "training iteration",
                    "mean_agent_reward": "mean over agents and episodes",
                    "mean_planner_reward": "mean over episodes"},
    },
}


def cmd_plotdata(report: str | Path, out: str | Path) -> Path:
    """Reshape an aggregate report into one tidy table per figure. Values are
    copied as text, so they match the report byte for byte."""
    report, out = Path(report), Path(out)
    out.mkdir(parents=True, exist_ok=True)

    def rows(name: str) -> list[dict[str, str]]:
        path = report / name
        return _read_csv(path) if path.exists() else []

    _write_csv(out / "fig4.csv", list(PLOT_SCHEMA["fig4.csv"]["columns"]),
               [[r["step"], r["environment"], r["resource"], r["mean_units"]]
                for r in rows("pooled_resources.csv")])
    _write_csv(out / "fig5.csv", list(PLOT_SCHEMA["fig5.csv"]["columns"]),
               [[r["step"], r["environment"], r["metric"], r["mean"], r["std"]]
                for r in rows("pooled_metrics.csv")])
    fig6_cols = list(PLOT_SCHEMA["fig6.csv"]["columns"])
    _write_csv(out / "fig6.csv", fig6_cols, [[r[c] for c in fig6_cols] for r in rows("tax_returns.csv")])
    fig10_cols = list(PLOT_SCHEMA["fig10.csv"]["columns"])
    _write_csv(out / "fig10.csv", fig10_cols, [[r[c] for c in fig10_cols] for r in rows("curves.csv")])
    (out / "schema.json").write_text(json.dumps(PLOT_SCHEMA, indent=2) + "\n")
    return out
