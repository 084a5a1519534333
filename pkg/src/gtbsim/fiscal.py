"""Bracketed income tax and the randomized, wealth-biased tax return."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

N_RATE_LEVELS = 21  # 0.00, 0.05, ..., 1.00
KEEP = 0  # planner setting 0 leaves the bracket rate unchanged
N_SETTINGS = N_RATE_LEVELS + 1


def setting_rate(setting: int) -> float | None:
    """Marginal rate for a planner setting; None means keep the current rate."""
    if not 0 <= setting < N_SETTINGS:
        raise ValueError(f"tax setting {setting} outside [0, {N_SETTINGS})")
    if setting == KEEP:
        return None
    return (setting - 1) / 20


def rate_setting(rate: float) -> int:
    k = round(rate * 20)
    if not math.isclose(k / 20, rate, abs_tol=1e-12) or not 0 <= k <= 20:
        raise ValueError(f"rate {rate} is not one of the {N_RATE_LEVELS} discrete levels")
    return k + 1


@dataclass
class TaxSchedule:
    cutoffs: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        self.cutoffs = tuple(float(c) for c in self.cutoffs)
        self.rates = tuple(float(r) for r in self.rates)
        c = self.cutoffs
        if len(c) < 2 or c[0] != 0.0 or c[-1] != math.inf:
            raise ValueError("cutoffs must start at 0 and end at +inf")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError("cutoffs must be strictly increasing")
        if len(self.rates) != len(c) - 1:
            raise ValueError(f"{len(c) - 1} brackets need as many rates, got {len(self.rates)}")
        if any(not 0.0 <= r <= 1.0 for r in self.rates):
            raise ValueError("rates must lie in [0, 1]")

    @classmethod
    def zero(cls, cutoffs: Sequence[float]) -> "TaxSchedule":
        return cls(tuple(cutoffs), (0.0,) * (len(cutoffs) - 1))

    @property
    def n_brackets(self) -> int:
        return len(self.rates)

    def scaled(self, factor: float) -> "TaxSchedule":
        return TaxSchedule(self.cutoffs, tuple(r * factor for r in self.rates))

    def marginal_rate(self, z: float) -> float:
        """Rate of the bracket containing income ``z`` (brackets are (b_j, b_j+1])."""
        z = max(z, 0.0)
        for j in range(self.n_brackets):
            if z <= self.cutoffs[j + 1]:
                return self.rates[j]
        return self.rates[-1]


def compute_tax(z: float, schedule: TaxSchedule) -> float:
    """Payable tax on income ``z``; negative income is taxed as zero."""
    z = max(float(z), 0.0)
    tax = 0.0
    cut, rates = schedule.cutoffs, schedule.rates
    for j, rate in enumerate(rates):
        lo, hi = cut[j], cut[j + 1]
        if z <= lo:
            break
        tax += rate * (min(z, hi) - lo)
    return tax


def set_rates(schedule: TaxSchedule, action: Sequence[int]) -> TaxSchedule:
    if len(action) != schedule.n_brackets:
        raise ValueError(f"expected {schedule.n_brackets} bracket settings, got {len(action)}")
    rates = []
    for current, setting in zip(schedule.rates, action):
        new = setting_rate(int(setting))
        rates.append(current if new is None else new)
    return TaxSchedule(schedule.cutoffs, tuple(rates))


@dataclass
class RedistributionDraw:
    urn_threshold: float
    nti: float
    noa: int
    nowa: int
    threshold: float
    urns: dict[int, float] = field(default_factory=dict)
    ris: dict[int, int] = field(default_factory=dict)


def select_wealthy(incomes: Sequence[float], rng: np.random.Generator,
                   scope: str = "agent") -> tuple[list[int], RedistributionDraw]:
    """Agents whose income strictly exceeds a randomized fraction of the mean.

    One threshold draw per call; then one (urn, ri) pair per wealthy agent in
    id order, or a single shared pair when ``scope == "period"``.
    """
    incomes = [float(z) for z in incomes]
    noa = len(incomes)
    nti = math.fsum(incomes)
    urn = float(rng.random())
    threshold = (0.7 + 0.1 * urn) * nti / noa
    wealthy = [i for i, z in enumerate(incomes) if z > threshold]
    draw = RedistributionDraw(urn, nti, noa, len(wealthy), threshold)
    if scope == "period":
        if wealthy:
            u, ri = float(rng.random()), int(rng.integers(2))
            draw.urns = {i: u for i in wealthy}
            draw.ris = {i: ri for i in wealthy}
    else:
        for i in wealthy:
            draw.urns[i] = float(rng.random())
            draw.ris[i] = int(rng.integers(2))
    return wealthy, draw


def redistribute(nttr: float, wealthy: Sequence[int], draw: RedistributionDraw) -> list[float]:
    """Per-agent returns; non-wealthy agents get nothing."""
    if nttr < 0:
        raise ValueError(f"net total tax revenue must be non-negative, got {nttr}")
    noa, nowa = draw.noa, len(wealthy)
    if nowa != draw.nowa:
        raise ValueError("wealthy set does not match the draw")
    returns = [0.0] * noa
    if nowa == 0 or nttr == 0:
        return returns
    if nowa == noa:
        return [nttr / noa] * noa  # equal split; fsum lies within 2x of nttr so the residual is exact
    share = 1.0 - nowa / noa
    # Snap each return onto the ulp grid of 2 * nttr, which bounds every partial
    # sum. Partial sums and the planner residual are then exact floats in any
    # summation order (each return moves by at most one ulp of nttr).
    u = math.ulp(2.0 * nttr)
    for i in wealthy:
        sign = -1.0 if draw.ris[i] % 2 else 1.0
        raw = noa / nowa * (1.0 + sign * draw.urns[i] * share) * nttr / noa
        returns[i] = round(raw / u) * u
    return returns


def ledger_residual(nttr: float, returns: Sequence[float]) -> float:
    """Planner residual such that ``fsum(returns) + residual == nttr`` in floats."""
    paid = math.fsum(returns)
    residual = nttr - paid
    if paid + residual != nttr:
        raise ArithmeticError("returns are not on the revenue grid; residual is inexact")
    return residual


@dataclass
class TaxPeriodRecord:
    period: int
    incomes: list[float]
    taxes: list[float]
    shortfalls: list[float]
    nttr: float
    returns: list[float]
    residual: float
    wealthy: list[int]
    draw: RedistributionDraw
    rates: tuple[float, ...]


def close_tax_year(world, schedule: TaxSchedule, baselines: Sequence[float], period: int,
                   rng: np.random.Generator, scope: str = "agent") -> TaxPeriodRecord:
    """Collect taxes on the year's coin change, pay returns, and log the period.

    ``baselines`` are the coin endowments at the start of the year. Taxes are
    debited from free coin; an agent that cannot cover its bill (coin tied in
    open bids) is clamped at zero and the shortfall is recorded.
    """
    agents = world.agents
    incomes = [a.endowment - b for a, b in zip(agents, baselines)]
    taxes = [compute_tax(z, schedule) for z in incomes]
    shortfalls = []
    for a, t in zip(agents, taxes):
        short = max(t - a.coin, 0.0)
        if short > 0:
            log.warning("agent %d short %.4f coin on tax in period %d", a.id, short, period)
        a.coin = max(a.coin - t, 0.0)
        shortfalls.append(short)
    nttr = math.fsum(t - s for t, s in zip(taxes, shortfalls))
    wealthy, draw = select_wealthy(incomes, rng, scope)
    returns = redistribute(nttr, wealthy, draw)
    for a, r in zip(agents, returns):
        a.coin += r
    return TaxPeriodRecord(period, incomes, taxes, shortfalls, nttr, returns,
                           ledger_residual(nttr, returns), wealthy, draw, schedule.rates)
