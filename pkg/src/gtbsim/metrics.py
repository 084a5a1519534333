"""Utility, inequality, productivity and social-welfare measures over coin endowments."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

EQ_TIMES_PROD = "eq_times_prod"
INVERSE_INCOME = "inverse_income"
PRODUCTIVITY = "productivity"
EQUALITY = "equality"
OBJECTIVES = (EQ_TIMES_PROD, INVERSE_INCOME, PRODUCTIVITY, EQUALITY)

# Utility reported for zero coin when eta > 1, where the isoelastic term diverges.
UTILITY_FLOOR = -1e9
# Smallest coin used for inverse-income weights (one coin-cent).
WEIGHT_EPS = 0.01


def utility(coin: float, labor: float, eta: float = 0.23) -> float:
    """Isoelastic utility of coin minus accumulated labor."""
    if eta <= 0 or eta == 1.0:
        raise ValueError(f"eta must be positive and != 1, got {eta}")
    if coin < 0:
        raise ValueError(f"coin must be non-negative, got {coin}")
    if coin == 0 and eta > 1:
        log.debug("utility at zero coin with eta=%s floored", eta)
        return UTILITY_FLOOR - labor
    return (coin ** (1.0 - eta) - 1.0) / (1.0 - eta) - labor


def gini(coins: Sequence[float]) -> float:
    """Pairwise-difference Gini index; 0 for an all-zero population."""
    c = np.asarray(coins, dtype=float)
    n = c.size
    if n < 2:
        raise ValueError("gini needs at least two agents")
    total = c.sum()
    if total == 0:
        return 0.0
    return float(np.abs(c[:, None] - c[None, :]).sum() / (2 * n * total))


def equality(coins: Sequence[float]) -> float:
    n = len(coins)
    return 1.0 - n / (n - 1) * gini(coins)


def productivity(coins: Sequence[float]) -> float:
    return float(np.sum(coins, dtype=float))


def maximin(coins: Sequence[float]) -> float:
    if len(coins) < 1:
        raise ValueError("maximin needs at least one agent")
    return float(np.min(coins))


def inverse_income_weights(coins: Sequence[float]) -> np.ndarray:
    inv = 1.0 / np.maximum(np.asarray(coins, dtype=float), WEIGHT_EPS)
    return inv / inv.sum()


@dataclass
class WelfareSnapshot:
    coins: np.ndarray
    labor: np.ndarray
    eta: float
    utilities: np.ndarray = field(init=False)
    gini: float = field(init=False)
    equality: float = field(init=False)
    productivity: float = field(init=False)
    maximin: float = field(init=False)
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        self.coins = np.asarray(self.coins, dtype=float)
        self.labor = np.asarray(self.labor, dtype=float)
        self.utilities = np.array([utility(c, l, self.eta) for c, l in zip(self.coins, self.labor)])
        if len(self.coins) >= 2:
            self.gini = gini(self.coins)
            self.equality = equality(self.coins)
        else:
            self.gini, self.equality = 0.0, 1.0
        self.productivity = productivity(self.coins)
        self.maximin = maximin(self.coins)
        self.weights = inverse_income_weights(self.coins)

    def swf(self, kind: str) -> float:
        return social_welfare(kind, self)


def snapshot(coins: Sequence[float], labor: Sequence[float], eta: float = 0.23) -> WelfareSnapshot:
    return WelfareSnapshot(np.asarray(coins, dtype=float), np.asarray(labor, dtype=float), eta)


def social_welfare(kind: str, snap: WelfareSnapshot) -> float:
    if kind == EQ_TIMES_PROD:
        return snap.equality * snap.productivity
    if kind == INVERSE_INCOME:
        return float(np.dot(snap.weights, snap.utilities))
    if kind == PRODUCTIVITY:
        return snap.productivity
    if kind == EQUALITY:
        return snap.equality
    raise ValueError(f"unknown social welfare kind {kind!r}")
