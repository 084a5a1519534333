"""Continuous double auction over single-unit resource orders."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .world import RESOURCE_NAMES, Resource, WorldState


N_PRICES = 11  # integer prices 0..10


class Side(IntEnum):
    BID = 0
    ASK = 1


ACCEPTED = "accepted"
EXECUTED = "executed"
REJECTED = "rejected"

INVALID_PRICE = "invalid price"
CAP = "open-order cap"
NO_FUNDS = "insufficient funds"
NO_RESOURCE = "insufficient resource"


@dataclass
class Order:
    owner: int
    side: Side
    resource: Resource
    price: int
    placed_at: int
    id: int = -1


@dataclass(frozen=True)
class Trade:
    step: int
    resource: Resource
    price: int
    buyer: int
    seller: int
    bid_id: int
    ask_id: int


@dataclass
class SubmitOutcome:
    status: str
    order: Order
    trade: Trade | None = None
    reason: str | None = None


@dataclass
class MarketObservation:
    own: np.ndarray | None  # (resource, side, price) counts of the viewer's open orders
    others: np.ndarray  # everyone else's (all agents for the planner)
    avg_price: np.ndarray  # per resource, 0 before the first trade
    trade_counts: np.ndarray  # (resource, price)


class OrderBook:
    """Open orders bucketed by (resource, side, price) in arrival order.

    Tie-breaking draws come from ``rng`` and are only consumed when two or
    more best-priced orders share the earliest placement step.
    """

    def __init__(self, n_agents: int, rng: np.random.Generator, n_prices: int = N_PRICES,
                 expiry: int = 50, max_open: int = 5):
        self.n_agents = n_agents
        self.n_prices = n_prices
        self.expiry = expiry
        self.max_open = max_open
        self.rng = rng
        self.levels = [[[[] for _ in range(n_prices)] for _ in Side] for _ in Resource]
        self.counts = np.zeros((n_agents, len(Resource), len(Side), n_prices), dtype=np.int64)
        self.trades: list[Trade] = []
        self.price_sum = np.zeros(len(Resource))
        self.trade_counts = np.zeros((len(Resource), n_prices), dtype=np.int64)
        self._next_id = 0

    def open_orders(self) -> list[Order]:
        out = [o for res in self.levels for side in res for lvl in side for o in lvl]
        return sorted(out, key=lambda o: o.id)

    def n_open(self, owner: int, resource: Resource, side: Side) -> int:
        return int(self.counts[owner, resource, side].sum())

    def _best_resting(self, order: Order) -> Order | None:
        if order.side == Side.BID:
            book = self.levels[order.resource][Side.ASK]
            prices = range(0, order.price + 1)
        else:
            book = self.levels[order.resource][Side.BID]
            prices = range(self.n_prices - 1, order.price - 1, -1)
        for p in prices:
            lvl = book[p]
            if not lvl:
                continue
            first = lvl[0].placed_at
            tied = 1
            while tied < len(lvl) and lvl[tied].placed_at == first:
                tied += 1
            return lvl[0] if tied == 1 else lvl[int(self.rng.integers(tied))]
        return None

    def _remove(self, order: Order) -> None:
        self.levels[order.resource][order.side][order.price].remove(order)
        self.counts[order.owner, order.resource, order.side, order.price] -= 1

    def submit(self, world: WorldState, order: Order) -> SubmitOutcome:
        agent = world.agents[order.owner]
        if not (isinstance(order.price, (int, np.integer)) and 0 <= order.price < self.n_prices):
            return SubmitOutcome(REJECTED, order, reason=INVALID_PRICE)
        order.side, order.resource = Side(order.side), Resource(order.resource)
        if self.n_open(order.owner, order.resource, order.side) >= self.max_open:
            return SubmitOutcome(REJECTED, order, reason=CAP)
        if order.side == Side.BID:
            if agent.coin < order.price:
                return SubmitOutcome(REJECTED, order, reason=NO_FUNDS)
            agent.coin -= order.price
            agent.escrow_coin += order.price
        else:
            if agent.inventory[order.resource] < 1:
                return SubmitOutcome(REJECTED, order, reason=NO_RESOURCE)
            agent.inventory[order.resource] -= 1
            agent.escrow[order.resource] += 1
        agent.labor += world.cfg.labor.trade
        order.id = self._next_id
        self._next_id += 1

        resting = self._best_resting(order)
        if resting is None:
            self.levels[order.resource][order.side][order.price].append(order)
            self.counts[order.owner, order.resource, order.side, order.price] += 1
            return SubmitOutcome(ACCEPTED, order)

        self._remove(resting)
        bid, ask = (order, resting) if order.side == Side.BID else (resting, order)
        price = resting.price
        buyer, seller = world.agents[bid.owner], world.agents[ask.owner]
        buyer.escrow_coin -= bid.price
        buyer.coin += bid.price - price
        buyer.inventory[order.resource] += 1
        seller.escrow[order.resource] -= 1
        seller.coin += price
        trade = Trade(world.step, order.resource, price, bid.owner, ask.owner, bid.id, ask.id)
        self.trades.append(trade)
        self.price_sum[order.resource] += price
        self.trade_counts[order.resource, price] += 1
        return SubmitOutcome(EXECUTED, order, trade=trade)

    def expire(self, world: WorldState, now: int) -> list[Order]:
        """Drop orders open for ``expiry`` steps or more and release their escrow."""
        released = []
        for res in self.levels:
            for side in res:
                for p, lvl in enumerate(side):
                    if not lvl or now - lvl[0].placed_at < self.expiry:
                        continue
                    keep = []
                    for o in lvl:
                        (released if now - o.placed_at >= self.expiry else keep).append(o)
                    side[p] = keep
        for o in released:
            self.counts[o.owner, o.resource, o.side, o.price] -= 1
            agent = world.agents[o.owner]
            if o.side == Side.BID:
                agent.escrow_coin -= o.price
                agent.coin += o.price
            else:
                agent.escrow[o.resource] -= 1
                agent.inventory[o.resource] += 1
        released.sort(key=lambda o: o.id)
        return released

    def observe(self, viewer: int | None) -> MarketObservation:
        """Order-count vectors for agent ``viewer``, or the planner when None."""
        n_trades = self.trade_counts.sum(axis=1)
        avg = np.divide(self.price_sum, n_trades, out=np.zeros(len(Resource)), where=n_trades > 0)
        total = self.counts.sum(axis=0)
        if viewer is None:
            return MarketObservation(None, total, avg, self.trade_counts.copy())
        own = self.counts[viewer].copy()
        return MarketObservation(own, total - own, avg, self.trade_counts.copy())

    def write_trades(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "resource", "price", "buyer", "seller"])
            for t in self.trades:
                w.writerow([t.step, RESOURCE_NAMES[t.resource], t.price, t.buyer, t.seller])


def submit_order(book: OrderBook, world: WorldState, order: Order) -> SubmitOutcome:
    return book.submit(world, order)


def expire_orders(book: OrderBook, world: WorldState, now: int) -> list[Order]:
    return book.expire(world, now)


def market_observation(book: OrderBook, viewer: int | None) -> MarketObservation:
    return book.observe(viewer)
