"""Feature encoders for agent and planner observations.

Every observation is split into a spatial block (channels first) and a flat
vector block so that policies can route them through different layers.

Agent spatial channels (11 x 11 egocentric window)::

    0 outside the world    1 water
    2-4 regen cell (wood, stone, iron)
    5-7 resource units present (wood, stone, iron), as a fraction of the cap
    8 own house            9 other agents' houses     10 other agents

Agent vector block, in order: inventory (3), escrowed resources (3), coin,
escrowed coin, labor, build skills (3), own open-order counts (3x2x11),
others' open-order counts (3x2x11), average trade price (3), trade counts per
price (3x11), current marginal rates (7), tax-year progress, last year's
incomes sorted ascending (N), own current marginal rate.

Planner spatial channels (full map)::

    0 water   1-3 regen cell   4-6 resource units   7-9 house by type   10 agents

Planner vector block: per-agent inventory (3N), escrowed resources (3N), coin
(N), escrowed coin (N), all open-order counts (3x2x11), average trade price
(3), trade counts (3x11), current marginal rates (7), tax-year progress, last
year's incomes by agent id (N), marginal rate at each of those incomes (N).
Build skills never enter the planner block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WINDOW = 11
RADIUS = WINDOW // 2
N_AGENT_CHANNELS = 11
N_PLANNER_CHANNELS = 11
OUTSIDE = 0

COIN_SCALE = 100.0
UNIT_SCALE = 10.0
SKILL_SCALE = 30.0
PRICE_SCALE = 10.0


@dataclass
class AgentObservation:
    spatial: np.ndarray  # (N_AGENT_CHANNELS, WINDOW, WINDOW)
    vector: np.ndarray
    mask: np.ndarray  # legal actions


@dataclass
class PlannerObservation:
    spatial: np.ndarray  # (N_PLANNER_CHANNELS, height, width)
    vector: np.ndarray


def agent_vector_size(n_agents: int) -> int:
    return 9 + 3 + 66 + 66 + 3 + 33 + 7 + 1 + n_agents + 1


def planner_vector_size(n_agents: int) -> int:
    return 8 * n_agents + 66 + 3 + 33 + 7 + 1 + 2 * n_agents


def _public_map(world) -> np.ndarray:
    H, W = world.layout.height, world.layout.width
    cap = world.cfg.layout.regen_cap
    m = np.zeros((N_PLANNER_CHANNELS, H, W), dtype=np.float32)
    m[0] = world.water
    for k in range(3):
        m[1 + k] = world.regen_kind == k
        m[4 + k] = (world.regen_kind == k) * world.units / cap
        m[7 + k] = world.house_type == k
    m[10] = world.agent_at >= 0
    return m


def encode_planner_spatial(world) -> np.ndarray:
    return _public_map(world)


def encode_agent_spatial(world) -> np.ndarray:
    """Egocentric windows for every agent, shape (N, C, WINDOW, WINDOW)."""
    H, W = world.layout.height, world.layout.width
    base = _public_map(world)
    padded = np.zeros((N_AGENT_CHANNELS, H + 2 * RADIUS, W + 2 * RADIUS), dtype=np.float32)
    padded[OUTSIDE] = 1.0
    inner = (slice(None), slice(RADIUS, RADIUS + H), slice(RADIUS, RADIUS + W))
    padded[OUTSIDE][inner[1:]] = 0.0
    padded[1:8][inner] = base[0:7]
    owner = np.full((H + 2 * RADIUS, W + 2 * RADIUS), -1, dtype=np.int64)
    owner[inner[1:]] = world.house_owner
    occupant = np.full_like(owner, -1)
    occupant[inner[1:]] = world.agent_at

    out = np.empty((len(world.agents), N_AGENT_CHANNELS, WINDOW, WINDOW), dtype=np.float32)
    for a in world.agents:
        r, c = a.location
        win = (slice(r, r + WINDOW), slice(c, c + WINDOW))
        out[a.id, :8] = padded[:8, win[0], win[1]]
        own = owner[win]
        out[a.id, 8] = own == a.id
        out[a.id, 9] = (own >= 0) & (own != a.id)
        occ = occupant[win]
        out[a.id, 10] = (occ >= 0) & (occ != a.id)
    return out


def _tax_block(env) -> list[float]:
    rates = list(env.effective_schedule.rates)
    progress = (env.world.step % env.cfg.tax_period) / env.cfg.tax_period
    return rates + [progress]


def encode_agent_vectors(env) -> np.ndarray:
    world, book = env.world, env.book
    n = len(world.agents)
    sorted_incomes = np.sort(np.asarray(env.last_incomes, dtype=float)) / COIN_SCALE
    trade_counts = np.log1p(book.trade_counts.ravel())
    total = book.counts.sum(axis=0)
    n_trades = book.trade_counts.sum(axis=1)
    avg = np.divide(book.price_sum, n_trades, out=np.zeros(3), where=n_trades > 0) / PRICE_SCALE
    tax = _tax_block(env)
    out = np.empty((n, agent_vector_size(n)), dtype=np.float32)
    sched = env.effective_schedule
    for a in world.agents:
        own = book.counts[a.id]
        year_income = a.endowment - env.baselines[a.id]
        out[a.id] = np.concatenate([
            np.asarray(a.inventory, dtype=float) / UNIT_SCALE,
            np.asarray(a.escrow, dtype=float) / UNIT_SCALE,
            [a.coin / COIN_SCALE, a.escrow_coin / COIN_SCALE, a.labor / COIN_SCALE],
            np.asarray(a.build_skill) / SKILL_SCALE,
            own.ravel() / book.max_open,
            (total - own).ravel() / (book.max_open * max(n - 1, 1)),
            avg,
            trade_counts,
            tax,
            sorted_incomes,
            [sched.marginal_rate(year_income)],
        ])
    return out


def encode_planner_vector(env) -> np.ndarray:
    world, book = env.world, env.book
    n = len(world.agents)
    inv = np.array([a.inventory for a in world.agents], dtype=float).ravel() / UNIT_SCALE
    esc = np.array([a.escrow for a in world.agents], dtype=float).ravel() / UNIT_SCALE
    coin = np.array([a.coin for a in world.agents]) / COIN_SCALE
    esc_coin = np.array([a.escrow_coin for a in world.agents]) / COIN_SCALE
    n_trades = book.trade_counts.sum(axis=1)
    avg = np.divide(book.price_sum, n_trades, out=np.zeros(3), where=n_trades > 0) / PRICE_SCALE
    incomes = np.asarray(env.last_incomes, dtype=float)
    marg = [env.effective_schedule.marginal_rate(z) for z in incomes]
    return np.concatenate([
        inv, esc, coin, esc_coin,
        book.counts.sum(axis=0).ravel() / (book.max_open * n),
        avg,
        np.log1p(book.trade_counts.ravel()),
        _tax_block(env),
        incomes / COIN_SCALE,
        marg,
    ]).astype(np.float32)


def encode_agent_obs(env) -> list[AgentObservation]:
    spatial = encode_agent_spatial(env.world)
    vectors = encode_agent_vectors(env)
    return [AgentObservation(spatial[i], vectors[i], env.action_mask(i))
            for i in range(len(env.world.agents))]


def encode_planner_obs(env) -> PlannerObservation:
    return PlannerObservation(encode_planner_spatial(env.world), encode_planner_vector(env))
