"""Discrete action encodings for agents (74 actions) and the planner (7 x 22)."""

from __future__ import annotations

from dataclasses import dataclass

from .fiscal import N_SETTINGS
from .market import N_PRICES, Side
from .world import Direction, HouseType, Resource

NOOP = 0
MOVE_BASE = 1
TRADE_BASE = MOVE_BASE + len(Direction)
BUILD_BASE = TRADE_BASE + len(Resource) * len(Side) * N_PRICES
N_AGENT_ACTIONS = BUILD_BASE + len(HouseType)

N_BRACKETS = 7
PLANNER_SHAPE = (N_BRACKETS, N_SETTINGS)
N_PLANNER_CHOICES = N_BRACKETS * N_SETTINGS


@dataclass(frozen=True)
class AgentAction:
    kind: str  # "noop", "move", "trade" or "build"
    direction: Direction | None = None
    resource: Resource | None = None
    side: Side | None = None
    price: int | None = None
    house: HouseType | None = None


def decode_agent(index: int) -> AgentAction:
    index = int(index)
    if not 0 <= index < N_AGENT_ACTIONS:
        raise ValueError(f"agent action {index} outside [0, {N_AGENT_ACTIONS})")
    if index == NOOP:
        return AgentAction("noop")
    if index < TRADE_BASE:
        return AgentAction("move", direction=Direction(index - MOVE_BASE))
    if index < BUILD_BASE:
        block, price = divmod(index - TRADE_BASE, N_PRICES)
        res, side = divmod(block, len(Side))
        return AgentAction("trade", resource=Resource(res), side=Side(side), price=price)
    return AgentAction("build", house=HouseType(index - BUILD_BASE))


def encode_agent(action: AgentAction) -> int:
    if action.kind == "noop":
        return NOOP
    if action.kind == "move":
        return MOVE_BASE + int(action.direction)
    if action.kind == "trade":
        return TRADE_BASE + (int(action.resource) * len(Side) + int(action.side)) * N_PRICES + action.price
    if action.kind == "build":
        return BUILD_BASE + int(action.house)
    raise ValueError(f"unknown action kind {action.kind!r}")


def trade_index(resource: Resource, side: Side, price: int) -> int:
    return encode_agent(AgentAction("trade", resource=resource, side=side, price=price))


def encode_planner(bracket: int, setting: int) -> int:
    """Flat index of one (bracket, setting) choice."""
    if not (0 <= bracket < N_BRACKETS and 0 <= setting < N_SETTINGS):
        raise ValueError(f"planner choice ({bracket}, {setting}) outside {PLANNER_SHAPE}")
    return bracket * N_SETTINGS + setting


def decode_planner(index: int) -> tuple[int, int]:
    if not 0 <= index < N_PLANNER_CHOICES:
        raise ValueError(f"planner index {index} outside [0, {N_PLANNER_CHOICES})")
    return divmod(int(index), N_SETTINGS)
