"""Deterministic baseline policies for agents and the planner."""

from __future__ import annotations

from collections import deque
from typing import Sequence

import numpy as np

from ..actions import BUILD_BASE, MOVE_BASE, NOOP, N_BRACKETS
from ..fiscal import KEEP, rate_setting
from ..rng import stream
from ..world import DELTAS, RECIPES, Direction, HouseType

NOOP_KIND = "noop"
RANDOM_KIND = "random"
GATHERER_BUILDER_KIND = "gatherer_builder"


class NoOpPolicy:
    name = NOOP_KIND
    needs_obs = False

    def reset(self, env) -> None:
        pass

    def act(self, env, obs) -> list[int]:
        return [NOOP] * env.cfg.n_agents


class RandomPolicy:
    """Uniform over each agent's legal actions."""

    name = RANDOM_KIND
    needs_obs = False

    def __init__(self, seed: int = 0):
        self.seed = seed

    def reset(self, env) -> None:
        self.rng = stream(self.seed, "policy")

    def act(self, env, obs) -> list[int]:
        out = []
        for i in range(env.cfg.n_agents):
            legal = np.flatnonzero(env.action_mask(i))
            out.append(int(legal[self.rng.integers(len(legal))]))
        return out


def _passable_grid(world, agent_id: int) -> np.ndarray:
    ok = ~world.water
    ok &= (world.agent_at < 0) | (world.agent_at == agent_id)
    ok &= (world.house_owner < 0) | (world.house_owner == agent_id)
    return ok


def first_step_toward(world, agent_id: int, goal: np.ndarray) -> int | None:
    """Move action along a shortest path to the nearest ``goal`` cell, or None.

    Returns NOOP when the agent already stands on a goal cell.
    """
    start = world.agents[agent_id].location
    if goal[start]:
        return NOOP
    ok = _passable_grid(world, agent_id)
    H, W = ok.shape
    first = {start: None}
    queue = deque([start])
    while queue:
        r, c = cell = queue.popleft()
        for d in Direction:
            dr, dc = DELTAS[d]
            nxt = (r + dr, c + dc)
            if not (0 <= nxt[0] < H and 0 <= nxt[1] < W) or nxt in first or not ok[nxt]:
                continue
            first[nxt] = d if first[cell] is None else first[cell]
            if goal[nxt]:
                return MOVE_BASE + int(first[nxt])
            queue.append(nxt)
    return None


class GathererBuilder:
    """Walks to the nearest needed resource, builds its best affordable house, never trades.

    An agent only pursues house types whose recipe it can complete from what it
    holds plus the resource kinds reachable from its spawn point; with nothing
    feasible it idles.
    """

    name = GATHERER_BUILDER_KIND
    needs_obs = False

    def reset(self, env) -> None:
        layout = env.world.layout
        self.reachable_kinds = []
        for p in layout.spawn_points:
            cells = layout.reachable(p)
            self.reachable_kinds.append({k for c, k in layout.regen.items() if c in cells})

    def _target(self, agent) -> HouseType | None:
        held = {k for k in range(3) if agent.inventory[k] > 0}
        feasible = [h for h in HouseType
                    if all(k in held or k in self.reachable_kinds[agent.id] for k in RECIPES[h])]
        if not feasible:
            return None
        return max(feasible, key=lambda h: (agent.build_skill[h], -h))

    def act_one(self, env, agent_id: int) -> int:
        world = env.world
        agent = world.agents[agent_id]
        affordable = [h for h in HouseType if all(agent.inventory[k] > 0 for k in RECIPES[h])]
        if affordable:
            if world.can_build_here(agent_id):
                best = max(affordable, key=lambda h: (agent.build_skill[h], -h))
                return BUILD_BASE + int(best)
            goal = (world.regen_kind < 0) & (world.house_owner < 0) & ~world.water
            step = first_step_toward(world, agent_id, goal)
            return NOOP if step is None else step
        target = self._target(agent)
        if target is None:
            return NOOP
        needed = [k for k in RECIPES[target] if agent.inventory[k] == 0]
        goal = np.isin(world.regen_kind, needed) & (world.units > 0)
        step = first_step_toward(world, agent_id, goal)
        return NOOP if step is None else step

    def act(self, env, obs) -> list[int]:
        return [self.act_one(env, i) for i in range(env.cfg.n_agents)]


def scripted_policy(kind: str, seed: int = 0):
    if kind == NOOP_KIND:
        return NoOpPolicy()
    if kind == RANDOM_KIND:
        return RandomPolicy(seed)
    if kind == GATHERER_BUILDER_KIND:
        return GathererBuilder()
    raise ValueError(f"unknown scripted policy {kind!r}")


class FixedRatePlanner:
    """Sets the given marginal rates in the first tax year and keeps them."""

    name = "fixed_rates"
    needs_obs = False

    def __init__(self, rates: Sequence[float]):
        if len(rates) != N_BRACKETS:
            raise ValueError(f"need {N_BRACKETS} rates")
        self.settings = [rate_setting(r) for r in rates]

    def reset(self, env) -> None:
        pass

    def act(self, env, obs) -> list[int]:
        return list(self.settings) if env.t == 0 else [KEEP] * N_BRACKETS


class KeepPlanner:
    """Never changes the schedule (taxes stay at zero)."""

    name = "keep"
    needs_obs = False

    def reset(self, env) -> None:
        pass

    def act(self, env, obs) -> list[int]:
        return [KEEP] * N_BRACKETS
