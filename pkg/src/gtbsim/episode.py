"""Full-episode runs and their CSV logs."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .actions import BUILD_BASE
from .config import ScenarioConfig
from .env import Economy, StepLog
from .fiscal import TaxPeriodRecord
from .world import RESOURCE_NAMES

METRICS_HEADER = ["step", "productivity", "equality", "gini", "maximin", "swf", "planner_reward"]
RESOURCES_HEADER = ["step", "wood", "stone", "iron"]
ACTIONS_HEADER = ["step", "agent", "action", "outcome", "coin", "labor", "wood", "stone", "iron",
                  "row", "col", "utility", "reward"]
TAXES_HEADER = ["period", "agent", "pretax_income", "tax", "shortfall", "tax_return", "wealthy",
                "nttr", "residual", "nowa", "urn_threshold", "urn", "ri"]
TRADES_HEADER = ["step", "resource", "price", "buyer", "seller"]
LOG_FILES = ("metrics.csv", "taxes.csv", "trades.csv", "resources.csv", "actions.csv")


class AgentPolicy(Protocol):
    name: str
    needs_obs: bool

    def reset(self, env: Economy) -> None: ...

    def act(self, env: Economy, obs) -> list[int]: ...


class PlannerPolicy(Protocol):
    name: str
    needs_obs: bool

    def reset(self, env: Economy) -> None: ...

    def act(self, env: Economy, obs) -> list[int] | None: ...


@dataclass
class EpisodeLog:
    config: ScenarioConfig
    seed: int
    policies: dict[str, str] = field(default_factory=dict)
    metrics: list[list] = field(default_factory=list)
    resources: list[list] = field(default_factory=list)
    actions: list[list] = field(default_factory=list)
    trades: list[list] = field(default_factory=list)
    taxes: list[TaxPeriodRecord] = field(default_factory=list)
    initial: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.metrics)

    def record_step(self, env: Economy, rec: StepLog) -> None:
        snap = rec.snapshot
        self.metrics.append([rec.step, snap.productivity, snap.equality, snap.gini, snap.maximin,
                             rec.swf, rec.planner_reward])
        self.resources.append([rec.step, *rec.resources])
        for a in env.world.agents:
            self.actions.append([rec.step, a.id, rec.actions[a.id], rec.outcomes[a.id], a.endowment,
                                 a.labor, *(a.inventory[k] + a.escrow[k] for k in range(3)),
                                 a.location[0], a.location[1], float(snap.utilities[a.id]),
                                 float(rec.rewards[a.id])])
        for t in rec.trades:
            self.trades.append([t.step, RESOURCE_NAMES[t.resource], t.price, t.buyer, t.seller])

    # -- tabular views -----------------------------------------------------------

    def series(self, column: str) -> np.ndarray:
        return np.array([row[METRICS_HEADER.index(column)] for row in self.metrics], dtype=float)

    def agent_series(self, column: str) -> np.ndarray:
        """(steps, agents) array of one actions.csv column."""
        idx = ACTIONS_HEADER.index(column)
        n = self.config.n_agents
        vals = [row[idx] for row in self.actions]
        return np.array(vals, dtype=object if column == "outcome" else float).reshape(-1, n)

    def resource_series(self) -> np.ndarray:
        return np.array([row[1:] for row in self.resources], dtype=float)

    def houses_by_type(self) -> np.ndarray:
        """(agents, house types) count of successful builds."""
        n = self.config.n_agents
        out = np.zeros((n, 3), dtype=int)
        for row in self.actions:
            if row[3] == "built":
                out[row[1], row[2] - BUILD_BASE] += 1
        return out

    def tax_rows(self) -> list[list]:
        rows = []
        for rec in self.taxes:
            d = rec.draw
            for i in range(len(rec.incomes)):
                rows.append([rec.period, i, rec.incomes[i], rec.taxes[i], rec.shortfalls[i],
                             rec.returns[i], int(i in rec.wealthy), rec.nttr, rec.residual, d.nowa,
                             d.urn_threshold, d.urns.get(i, ""), d.ris.get(i, "")])
        return rows

    # -- serialization ------------------------------------------------------------

    def manifest(self) -> dict:
        cfg = self.config
        return {
            "format": 1,
            "seed": self.seed,
            "config_hash": cfg.digest(),
            "config": cfg.to_dict(),
            "layout_kind": cfg.layout.kind,
            "objective": cfg.objective,
            "episode_length": cfg.episode_length,
            "tax_period": cfg.tax_period,
            "n_agents": cfg.n_agents,
            "policies": self.policies,
            "initial": self.initial,
            "final": self.final,
        }

    def csv_texts(self) -> dict[str, str]:
        tables = {
            "metrics.csv": (METRICS_HEADER, self.metrics),
            "taxes.csv": (TAXES_HEADER, self.tax_rows()),
            "trades.csv": (TRADES_HEADER, self.trades),
            "resources.csv": (RESOURCES_HEADER, self.resources),
            "actions.csv": (ACTIONS_HEADER, self.actions),
        }
        out = {}
        for name, (header, rows) in tables.items():
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
            out[name] = buf.getvalue()
        return out

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, text in self.csv_texts().items():
            (directory / name).write_text(text)
        (directory / "manifest.json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return directory


def run_episode(cfg: ScenarioConfig, seed: int, agent_policy: AgentPolicy,
                planner_policy: PlannerPolicy | None = None, *, tax_scale: float = 1.0) -> EpisodeLog:
    env = Economy(cfg, seed)
    env.tax_scale = tax_scale
    agent_policy.reset(env)
    if planner_policy is not None:
        planner_policy.reset(env)
    log = EpisodeLog(cfg, seed, {"agents": agent_policy.name,
                                 "planner": planner_policy.name if planner_policy else "none"})
    w = env.world
    log.initial = {
        "coins": [a.endowment for a in w.agents],
        "utilities": env.initial.utilities.tolist(),
        "swf": env.initial_swf,
        "resource_totals": w.resource_totals(),
        "build_skills": [list(a.build_skill) for a in w.agents],
        "spawn_points": [list(p) for p in w.layout.spawn_points],
    }
    want_agent_obs = getattr(agent_policy, "needs_obs", False)
    want_planner_obs = planner_policy is not None and getattr(planner_policy, "needs_obs", False)
    agent_obs = env.agent_observations() if want_agent_obs else None
    planner_obs = env.planner_observation() if want_planner_obs else None
    while not env.done:
        p_act = None
        if planner_policy is not None and env.year_start:
            p_act = planner_policy.act(env, planner_obs)
        actions = agent_policy.act(env, agent_obs)
        env.step(actions, p_act, observe=False)
        log.record_step(env, env.last_log)
        if want_agent_obs:
            agent_obs = env.agent_observations()
        if want_planner_obs:
            planner_obs = env.planner_observation()
    log.taxes = list(env.tax_records)
    log.final = {
        "houses_built": [list(h) for h in w.houses_built],
        "spawned": list(w.spawned),
        "bonus": list(w.bonus),
        "consumed": list(w.consumed),
    }
    return log
