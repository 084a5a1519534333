"""Scenario configuration: dataclasses, defaults and YAML loading."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from .metrics import OBJECTIVES

BAND = "band"
UNIFORM = "uniform"
LAYOUT_KINDS = (BAND, UNIFORM)

DEFAULT_REGEN_COUNTS = {
    BAND: {"wood": 40, "stone": 40, "iron": 36},
    UNIFORM: {"wood": 38, "stone": 38, "iron": 36},
}

# Fixed bracket cutoffs in coins; the last bracket is open-ended.
DEFAULT_CUTOFFS = (0.0, 9.7, 39.475, 84.2, 160.725, 204.1, 510.3, math.inf)


class ConfigError(ValueError):
    """Raised when a configuration violates a structural constraint."""


@dataclass
class LayoutConfig:
    kind: str = UNIFORM
    width: int = 25
    height: int = 25
    regen_counts: dict[str, int] | None = None
    regen_prob: float = 0.5
    regen_cap: int = 1

    def counts(self) -> dict[str, int]:
        if self.regen_counts is None:
            return dict(DEFAULT_REGEN_COUNTS[self.kind])
        return {k: int(self.regen_counts.get(k, 0)) for k in ("wood", "stone", "iron")}


@dataclass
class LaborCosts:
    move: float = 0.21
    gather: float = 0.21
    trade: float = 0.05
    build: float = 2.1


@dataclass
class SkillConfig:
    pareto_shape: float = 4.0
    low: float = 10.0
    high: float = 30.0


@dataclass
class MarketConfig:
    expiry: int = 50
    max_open_orders: int = 5


@dataclass
class TaxConfig:
    enabled: bool = True
    cutoffs: tuple[float, ...] = DEFAULT_CUTOFFS
    # "agent": fresh (urn, ri) per wealthy agent; "period": one pair shared by all.
    return_scope: str = "agent"


@dataclass
class ScenarioConfig:
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    n_agents: int = 5
    episode_length: int = 2000
    tax_period: int = 100
    labor: LaborCosts = field(default_factory=LaborCosts)
    gather_bonus_prob: float = 0.2
    skills: SkillConfig = field(default_factory=SkillConfig)
    market: MarketConfig = field(default_factory=MarketConfig)
    tax: TaxConfig = field(default_factory=TaxConfig)
    eta: float = 0.23
    initial_coin: float = 0.0
    objective: str = "eq_times_prod"

    def validate(self) -> "ScenarioConfig":
        lay = self.layout
        if lay.kind not in LAYOUT_KINDS:
            raise ConfigError(f"layout.kind must be one of {LAYOUT_KINDS}, got {lay.kind!r}")
        if lay.width < 1 or lay.height < 1:
            raise ConfigError("layout.width and layout.height must be positive")
        if not 0.0 <= lay.regen_prob <= 1.0:
            raise ConfigError("layout.regen_prob must lie in [0, 1]")
        if lay.regen_cap < 1:
            raise ConfigError("layout.regen_cap must be >= 1")
        if any(v < 0 for v in lay.counts().values()):
            raise ConfigError("layout.regen_counts must be non-negative")
        if self.n_agents < 1:
            raise ConfigError("n_agents must be >= 1")
        if self.tax_period < 1 or self.episode_length < 1:
            raise ConfigError("episode_length and tax_period must be positive")
        if self.episode_length % self.tax_period:
            raise ConfigError("episode_length must be divisible by tax_period")
        if not 0.0 <= self.gather_bonus_prob <= 1.0:
            raise ConfigError("gather_bonus_prob must lie in [0, 1]")
        if self.eta <= 0 or self.eta == 1.0:
            raise ConfigError("eta must be positive and != 1")
        sk = self.skills
        if not (0 < sk.low <= sk.high) or sk.pareto_shape <= 0:
            raise ConfigError("skills need 0 < low <= high and pareto_shape > 0")
        if min(asdict(self.labor).values()) < 0:
            raise ConfigError("labor costs must be non-negative")
        cut = tuple(float(c) for c in self.tax.cutoffs)
        if len(cut) < 2 or cut[0] != 0.0 or cut[-1] != math.inf:
            raise ConfigError("tax.cutoffs must start at 0 and end at inf")
        if any(b <= a for a, b in zip(cut, cut[1:])):
            raise ConfigError("tax.cutoffs must be strictly increasing")
        if self.tax.return_scope not in ("agent", "period"):
            raise ConfigError("tax.return_scope must be 'agent' or 'period'")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")
        if self.market.expiry < 1 or self.market.max_open_orders < 1:
            raise ConfigError("market.expiry and market.max_open_orders must be >= 1")
        if self.initial_coin < 0:
            raise ConfigError("initial_coin must be non-negative")
        return self

    @property
    def n_periods(self) -> int:
        return self.episode_length // self.tax_period

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["layout"]["regen_counts"] = self.layout.counts()
        d["tax"]["cutoffs"] = [c if math.isfinite(c) else "inf" for c in self.tax.cutoffs]
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{path}.{name}".lstrip("."))
        elif name == "cutoffs":
            kwargs[name] = tuple(math.inf if str(v).lower() in ("inf", "infinity") else float(v)
                                 for v in value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict[str, Any] | None) -> ScenarioConfig:
    return _build(ScenarioConfig, data or {}, "").validate()


def load_config(path: str | Path) -> ScenarioConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data)


def scenario(kind: str = UNIFORM, size: int | None = None, **overrides: Any) -> ScenarioConfig:
    """Default config for a layout kind; ``size`` sets a square grid, other
    keyword overrides replace top-level or layout fields."""
    layout = LayoutConfig(kind=kind)
    if size is not None:
        layout.width = layout.height = size
    cfg = ScenarioConfig(layout=layout)
    for k, v in overrides.items():
        if hasattr(layout, k) and k != "kind":
            setattr(layout, k, v)
            continue
        if not hasattr(cfg, k):
            raise ConfigError(f"unknown config key {k!r}")
        setattr(cfg, k, v)
    return cfg.validate()
