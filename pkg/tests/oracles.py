"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction


def tax_oracle(z, cutoffs, rates) -> Fraction:
    """Bracket-by-bracket indicator sum in exact rational arithmetic.

    ``cutoffs`` may end with math.inf; ``z`` and finite cutoffs are exact
    rationals (e.g. integer cents divided by 100).
    """
    z = max(Fraction(z), Fraction(0))
    total = Fraction(0)
    for j, tau in enumerate(rates):
        lo = Fraction(cutoffs[j])
        hi = cutoffs[j + 1]
        tau = Fraction(tau)
        if hi == math.inf:
            full = 0  # 1[z > inf] is never true
            part = (z - lo) if z > lo else 0
        else:
            hi = Fraction(hi)
            full = (hi - lo) if z > hi else 0
            part = (z - lo) if lo < z <= hi else 0
        total += tau * (full + part)
    return total


def gini_oracle(coins) -> Fraction:
    coins = [Fraction(c) for c in coins]
    n = len(coins)
    total = sum(coins)
    if total == 0:
        return Fraction(0)
    diff = sum(abs(a - b) for a, b in itertools.product(coins, coins))
    return diff / (2 * n * total)


@dataclass
class RefOrder:
    id: int
    owner: int
    side: int  # 0 bid, 1 ask
    resource: int
    price: int
    placed_at: int


class NaiveMatcher:
    """Flat-list double auction written straight from the priority rules.

    A new bid pairs with the lowest-priced compatible ask (a new ask with the
    highest-priced compatible bid); ties go to the earliest placement step and
    then to a uniformly random pick among the tied orders, listed in
    submission order. Trades execute at the resting order's price.
    """

    def __init__(self, rng, max_open=5, expiry=50):
        self.rng = rng
        self.max_open = max_open
        self.expiry = expiry
        self.open: list[RefOrder] = []
        self.trades: list[tuple] = []
        self.next_id = 0

    def submit(self, owner, side, resource, price, step, coins, stock) -> str:
        if not 0 <= price <= 10:
            return "rejected"
        mine = [o for o in self.open if o.owner == owner and o.side == side and o.resource == resource]
        if len(mine) >= self.max_open:
            return "rejected"
        if side == 0 and coins[owner] < price:
            return "rejected"
        if side == 1 and stock[owner][resource] < 1:
            return "rejected"
        if side == 0:
            coins[owner] -= price
        else:
            stock[owner][resource] -= 1
        order = RefOrder(self.next_id, owner, side, resource, price, step)
        self.next_id += 1
        if side == 0:
            cands = [o for o in self.open if o.side == 1 and o.resource == resource and o.price <= price]
            best = min((o.price for o in cands), default=None)
        else:
            cands = [o for o in self.open if o.side == 0 and o.resource == resource and o.price >= price]
            best = max((o.price for o in cands), default=None)
        if best is None:
            self.open.append(order)
            return "accepted"
        cands = [o for o in cands if o.price == best]
        first = min(o.placed_at for o in cands)
        tied = sorted((o for o in cands if o.placed_at == first), key=lambda o: o.id)
        match = tied[0] if len(tied) == 1 else tied[int(self.rng.integers(len(tied)))]
        self.open.remove(match)
        bid, ask = (order, match) if side == 0 else (match, order)
        exec_price = match.price
        coins[bid.owner] += bid.price - exec_price
        stock[bid.owner][resource] += 1
        coins[ask.owner] += exec_price
        self.trades.append((step, resource, exec_price, bid.owner, ask.owner))
        return "executed"

    def expire(self, now, coins, stock) -> None:
        keep = []
        for o in self.open:
            if now - o.placed_at >= self.expiry:
                if o.side == 0:
                    coins[o.owner] += o.price
                else:
                    stock[o.owner][o.resource] += 1
            else:
                keep.append(o)
        self.open = keep
