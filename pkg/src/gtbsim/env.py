"""Episode orchestration for the gather-trade-build economy."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import fiscal
from .actions import N_AGENT_ACTIONS, N_BRACKETS, TRADE_BASE, BUILD_BASE, MOVE_BASE, decode_agent
from .config import ConfigError, ScenarioConfig
from .fiscal import TaxPeriodRecord, TaxSchedule
from .market import N_PRICES, Order, OrderBook, Side
from .metrics import WelfareSnapshot, snapshot
from .observations import AgentObservation, PlannerObservation, encode_agent_obs, encode_planner_obs
from .rng import stream
from .world import DELTAS, RECIPES, Direction, WorldState, build_house, new_world, regen_resources, step_move


@dataclass
class StepResult:
    rewards: np.ndarray
    planner_reward: float
    done: bool
    outcomes: list[str]
    tax_record: TaxPeriodRecord | None = None
    agent_obs: list[AgentObservation] | None = None
    planner_obs: PlannerObservation | None = None


@dataclass
class StepLog:
    """Everything one step contributes to the episode log."""
    step: int
    actions: list[int]
    outcomes: list[str]
    rewards: np.ndarray
    planner_reward: float
    snapshot: WelfareSnapshot
    swf: float
    resources: list[int]
    trades: list = field(default_factory=list)


class Economy:
    """Gather-trade-build environment with a bracketed-tax planner.

    Sub-step order inside :meth:`step`: planner rate setting (first step of a
    tax year), agent actions in a random order, order expiry, resource
    regeneration, tax collection (last step of a tax year), metric snapshot.
    """

    def __init__(self, cfg: ScenarioConfig, seed: int = 0):
        cfg.validate()
        if len(cfg.tax.cutoffs) != N_BRACKETS + 1:
            raise ConfigError(f"tax.cutoffs must define {N_BRACKETS} brackets")
        self.cfg = cfg
        self.tax_enabled = cfg.tax.enabled
        self.tax_scale = 1.0
        self.reset(seed)

    # -- lifecycle -----------------------------------------------------------------

    def reset(self, seed: int | None = None):
        if seed is not None:
            self.seed = int(seed)
        cfg, seed = self.cfg, self.seed
        self.world: WorldState = new_world(cfg, seed)
        self.rng = stream(seed, "dynamics")
        self.fiscal_rng = stream(seed, "fiscal")
        self.book = OrderBook(cfg.n_agents, stream(seed, "market"), N_PRICES,
                              cfg.market.expiry, cfg.market.max_open_orders)
        self.schedule = TaxSchedule.zero(cfg.tax.cutoffs)
        self.baselines = [a.endowment for a in self.world.agents]
        self.last_incomes = [0.0] * cfg.n_agents
        self.tax_records: list[TaxPeriodRecord] = []
        self.current = self._snapshot()
        self.initial = self.current
        self.swf = self.current.swf(cfg.objective)
        self.initial_swf = self.swf
        return self.world, self.agent_observations(), self.planner_observation()

    @property
    def t(self) -> int:
        return self.world.step

    @property
    def done(self) -> bool:
        return self.world.step >= self.cfg.episode_length

    @property
    def year_start(self) -> bool:
        return self.world.step % self.cfg.tax_period == 0

    @property
    def effective_schedule(self) -> TaxSchedule:
        if not self.tax_enabled:
            return TaxSchedule.zero(self.cfg.tax.cutoffs)
        if self.tax_scale == 1.0:
            return self.schedule
        return self.schedule.scaled(self.tax_scale)

    def _snapshot(self) -> WelfareSnapshot:
        agents = self.world.agents
        return snapshot([a.endowment for a in agents], [a.labor for a in agents], self.cfg.eta)

    # -- observation ---------------------------------------------------------------

    def agent_observations(self) -> list[AgentObservation]:
        return encode_agent_obs(self)

    def planner_observation(self) -> PlannerObservation:
        return encode_planner_obs(self)

    def action_mask(self, agent_id: int) -> np.ndarray:
        """Legal agent actions: moves onto passable cells, fundable orders under
        the cap, builds with materials on a buildable cell. No-op is always legal."""
        world, book = self.world, self.book
        a = world.agents[agent_id]
        mask = np.zeros(N_AGENT_ACTIONS, dtype=bool)
        mask[0] = True
        r, c = a.location
        for d in Direction:
            dr, dc = DELTAS[d]
            mask[MOVE_BASE + d] = world.passable((r + dr, c + dc), agent_id)
        for res in range(3):
            base = TRADE_BASE + res * 2 * N_PRICES
            if book.n_open(agent_id, res, Side.BID) < book.max_open:
                top = min(int(np.floor(a.coin)), N_PRICES - 1)
                if top >= 0:
                    mask[base:base + top + 1] = True
            if a.inventory[res] > 0 and book.n_open(agent_id, res, Side.ASK) < book.max_open:
                mask[base + N_PRICES:base + 2 * N_PRICES] = True
        if world.can_build_here(agent_id):
            for h, (k1, k2) in RECIPES.items():
                mask[BUILD_BASE + h] = a.inventory[k1] > 0 and a.inventory[k2] > 0
        return mask

    # -- dynamics ------------------------------------------------------------------

    def _apply(self, agent_id: int, index: int) -> str:
        act = decode_agent(index)
        if act.kind == "noop":
            return "noop"
        if act.kind == "move":
            out = step_move(self.world, agent_id, act.direction, self.rng)
            if not out.moved:
                return "blocked"
            return "gathered" if out.gathered is not None else "moved"
        if act.kind == "trade":
            res = self.book.submit(self.world, Order(agent_id, act.side, act.resource, act.price, self.t))
            return res.status if res.reason is None else f"{res.status}:{res.reason}"
        income = build_house(self.world, agent_id, act.house)
        return "rejected" if income is None else "built"

    def step(self, agent_actions: Sequence[int], planner_action: Sequence[int] | None = None,
             observe: bool = True) -> StepResult:
        cfg, world = self.cfg, self.world
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        if len(agent_actions) != cfg.n_agents:
            raise ValueError(f"expected {cfg.n_agents} agent actions, got {len(agent_actions)}")
        for a in agent_actions:
            if not 0 <= int(a) < N_AGENT_ACTIONS:
                raise ValueError(f"agent action {a} outside [0, {N_AGENT_ACTIONS})")

        if planner_action is not None:
            if not self.year_start:
                raise ValueError("planner acts only on the first step of a tax year")
            if self.tax_enabled:
                self.schedule = fiscal.set_rates(self.schedule, planner_action)

        n_trades = len(self.book.trades)
        outcomes = [""] * cfg.n_agents
        for i in self.rng.permutation(cfg.n_agents):
            outcomes[i] = self._apply(int(i), int(agent_actions[i]))
        self.book.expire(world, self.t)
        regen_resources(world, self.rng)

        record = None
        if (self.t + 1) % cfg.tax_period == 0:
            record = fiscal.close_tax_year(world, self.effective_schedule, self.baselines,
                                           (self.t + 1) // cfg.tax_period - 1, self.fiscal_rng,
                                           cfg.tax.return_scope)
            self.tax_records.append(record)
            self.last_incomes = list(record.incomes)
            self.baselines = [a.endowment for a in world.agents]
        world.step += 1

        prev, prev_swf = self.current, self.swf
        self.current = self._snapshot()
        self.swf = self.current.swf(cfg.objective)
        rewards = self.current.utilities - prev.utilities
        result = StepResult(rewards, self.swf - prev_swf, self.done, outcomes, record)
        self.last_log = StepLog(self.t, [int(a) for a in agent_actions], outcomes, rewards,
                                result.planner_reward, self.current, self.swf,
                                world.resource_totals(), self.book.trades[n_trades:])
        if observe:
            result.agent_obs = self.agent_observations()
            result.planner_obs = self.planner_observation()
        return result


def reset(cfg: ScenarioConfig, seed: int) -> tuple[Economy, list[AgentObservation], PlannerObservation]:
    env = Economy(cfg, seed)
    return env, env.agent_observations(), env.planner_observation()
