"""Grid world: layouts, movement, gathering, regeneration and building."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .config import BAND, ConfigError, ScenarioConfig
from .rng import stream

log = logging.getLogger(__name__)

Coord = tuple[int, int]


class Resource(IntEnum):
    WOOD = 0
    STONE = 1
    IRON = 2


class HouseType(IntEnum):
    RED = 0
    BLUE = 1
    GREEN = 2


RECIPES: dict[HouseType, tuple[Resource, Resource]] = {
    HouseType.RED: (Resource.WOOD, Resource.STONE),
    HouseType.BLUE: (Resource.WOOD, Resource.IRON),
    HouseType.GREEN: (Resource.STONE, Resource.IRON),
}


class Direction(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


DELTAS: dict[Direction, Coord] = {
    Direction.UP: (-1, 0),
    Direction.DOWN: (1, 0),
    Direction.LEFT: (0, -1),
    Direction.RIGHT: (0, 1),
}

RESOURCE_NAMES = ("wood", "stone", "iron")
MAP_CHARS = {Resource.WOOD: "w", Resource.STONE: "s", Resource.IRON: "i"}


@dataclass(frozen=True)
class WorldLayout:
    width: int
    height: int
    kind: str
    water: frozenset[Coord]
    regen: dict[Coord, Resource]
    spawn_points: tuple[Coord, ...]

    def regen_count(self, kind: Resource) -> int:
        return sum(1 for k in self.regen.values() if k == kind)

    def in_bounds(self, cell: Coord) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def reachable(self, start: Coord) -> set[Coord]:
        """Cells reachable from ``start`` over non-water terrain."""
        seen = {start}
        queue = deque([start])
        while queue:
            r, c = queue.popleft()
            for dr, dc in DELTAS.values():
                nxt = (r + dr, c + dc)
                if nxt not in seen and self.in_bounds(nxt) and nxt not in self.water:
                    seen.add(nxt)
                    queue.append(nxt)
        return seen

    def dump(self) -> str:
        """One character per cell: W water, w/s/i regen kinds, '.' empty."""
        rows = []
        for r in range(self.height):
            row = []
            for c in range(self.width):
                if (r, c) in self.water:
                    row.append("W")
                elif (r, c) in self.regen:
                    row.append(MAP_CHARS[self.regen[(r, c)]])
                else:
                    row.append(".")
            rows.append("".join(row))
        return "\n".join(rows) + "\n"


def _stripe_bounds(width: int) -> list[tuple[int, int]]:
    inner = width - 2
    base, extra = divmod(inner, 3)
    bounds, start = [], 0
    for s in range(3):
        w = base + (1 if s < extra else 0)
        bounds.append((start, start + w))
        start += w + 1  # skip the water column
    return bounds


def _band_layout(cfg: ScenarioConfig, rng: np.random.Generator) -> WorldLayout:
    lay = cfg.layout
    W, H = lay.width, lay.height
    if W < 5:
        raise ConfigError(f"band layout needs width >= 5 for 3 stripes and 2 water columns, got {W}")
    bounds = _stripe_bounds(W)
    water = frozenset((r, b[1]) for b in bounds[:2] for r in range(H))

    per_stripe: list[list[int]] = [[], [], []]
    for a in range(cfg.n_agents):
        per_stripe[a % 3].append(a)
    spawn: dict[int, Coord] = {}
    for s, agents in enumerate(per_stripe):
        lo, hi = bounds[s]
        col = (lo + hi - 1) // 2
        if len(agents) > H:
            raise ConfigError(f"stripe {s} cannot hold {len(agents)} spawn points with height {H}")
        for j, a in enumerate(agents):
            spawn[a] = ((j + 1) * H // (len(agents) + 1), col)

    counts = lay.counts()
    regen: dict[Coord, Resource] = {}
    taken = set(spawn.values())
    for s, kind in enumerate(Resource):
        lo, hi = bounds[s]
        cells = [(r, c) for r in range(H) for c in range(lo, hi) if (r, c) not in taken]
        n = counts[RESOURCE_NAMES[kind]]
        if n > len(cells):
            raise ConfigError(
                f"{RESOURCE_NAMES[kind]} stripe has {len(cells)} free cells but {n} regen cells requested"
            )
        for i in sorted(rng.choice(len(cells), size=n, replace=False).tolist()):
            regen[cells[i]] = kind
    return WorldLayout(W, H, BAND, water, dict(sorted(regen.items())),
                       tuple(spawn[a] for a in range(cfg.n_agents)))


def _ring_spawns(W: int, H: int, n: int) -> list[Coord]:
    cr, cc = (H - 1) / 2, (W - 1) / 2
    radius = max(1.0, min(W, H) / 4)
    pts: list[Coord] = []
    for k in range(n):
        ang = 2 * np.pi * k / n
        p = (int(round(cr + radius * np.sin(ang))), int(round(cc + radius * np.cos(ang))))
        idx = p[0] * W + p[1]
        while p in pts:  # tiny grids: step along row-major order until free
            idx = (idx + 1) % (W * H)
            p = divmod(idx, W)
        pts.append(p)
    return pts


def _uniform_layout(cfg: ScenarioConfig, rng: np.random.Generator) -> WorldLayout:
    lay = cfg.layout
    W, H = lay.width, lay.height
    if cfg.n_agents > W * H:
        raise ConfigError(f"{W}x{H} grid cannot hold {cfg.n_agents} agents")
    spawn = _ring_spawns(W, H, cfg.n_agents)
    counts = lay.counts()
    total = sum(counts.values())
    free = [(r, c) for r in range(H) for c in range(W) if (r, c) not in set(spawn)]
    if total > len(free):
        raise ConfigError(f"{W}x{H} grid has {len(free)} free cells but {total} regen cells requested")

    order = [free[i] for i in rng.permutation(len(free))]
    # interleave kinds so placement is not biased toward whichever kind goes first
    pending = []
    remaining = dict(counts)
    while any(remaining.values()):
        for kind in Resource:
            if remaining[RESOURCE_NAMES[kind]]:
                pending.append(kind)
                remaining[RESOURCE_NAMES[kind]] -= 1

    regen: dict[Coord, Resource] = {}
    used: set[Coord] = set()
    for kind in pending:
        pick = None
        for cell in order:
            if cell in used:
                continue
            r, c = cell
            if all(regen.get((r + dr, c + dc)) != kind for dr, dc in DELTAS.values()):
                pick = cell
                break
        if pick is None:  # dense configs: adjacency cannot be avoided
            pick = next(cell for cell in order if cell not in used)
        used.add(pick)
        regen[pick] = kind
    return WorldLayout(W, H, lay.kind, frozenset(), dict(sorted(regen.items())), tuple(spawn))


def generate_layout(cfg: ScenarioConfig, seed: int) -> WorldLayout:
    cfg.validate()
    rng = stream(seed, "layout")
    if cfg.layout.kind == BAND:
        return _band_layout(cfg, rng)
    return _uniform_layout(cfg, rng)


@dataclass
class AgentState:
    id: int
    location: Coord
    build_skill: tuple[float, float, float]
    gather_bonus_prob: float
    inventory: list[int] = field(default_factory=lambda: [0, 0, 0])
    escrow: list[int] = field(default_factory=lambda: [0, 0, 0])
    coin: float = 0.0
    escrow_coin: float = 0.0
    labor: float = 0.0

    @property
    def endowment(self) -> float:
        """Coin owned, including coin committed to open bids."""
        return self.coin + self.escrow_coin


@dataclass
class MoveOutcome:
    moved: bool
    gathered: Resource | None = None
    units: int = 0


def draw_skills(cfg: ScenarioConfig, seed: int) -> np.ndarray:
    """Clipped-Pareto build skills, shape (n_agents, 3)."""
    rng = stream(seed, "skills")
    sk = cfg.skills
    raw = sk.low * (1.0 + rng.pareto(sk.pareto_shape, size=(cfg.n_agents, len(HouseType))))
    return np.clip(raw, sk.low, sk.high)


class WorldState:
    """Spatial ground truth of one episode. Mutated only by the episode thread."""

    def __init__(self, cfg: ScenarioConfig, layout: WorldLayout, skills: np.ndarray):
        self.cfg = cfg
        self.layout = layout
        H, W = layout.height, layout.width
        self.water = np.zeros((H, W), dtype=bool)
        for r, c in layout.water:
            self.water[r, c] = True
        self.regen_kind = np.full((H, W), -1, dtype=np.int8)
        for (r, c), k in layout.regen.items():
            self.regen_kind[r, c] = int(k)
        self._regen_rows = np.array([p[0] for p in layout.regen], dtype=np.int64)
        self._regen_cols = np.array([p[1] for p in layout.regen], dtype=np.int64)
        self._regen_kinds = np.array([int(k) for k in layout.regen.values()], dtype=np.int64)

        self.units = np.zeros((H, W), dtype=np.int64)
        self.units[self._regen_rows, self._regen_cols] = cfg.layout.regen_cap
        self.house_owner = np.full((H, W), -1, dtype=np.int64)
        self.house_type = np.full((H, W), -1, dtype=np.int8)
        self.agent_at = np.full((H, W), -1, dtype=np.int64)

        self.agents: list[AgentState] = []
        for i, loc in enumerate(layout.spawn_points):
            a = AgentState(i, loc, tuple(float(s) for s in skills[i]), cfg.gather_bonus_prob,
                           coin=float(cfg.initial_coin))
            self.agents.append(a)
            self.agent_at[loc] = i
        self.step = 0

        self.initial_totals = self.resource_totals()
        self.spawned = [0, 0, 0]
        self.bonus = [0, 0, 0]
        self.consumed = [0, 0, 0]
        self.houses_built = [[0, 0, 0] for _ in self.agents]

    @property
    def houses(self) -> dict[Coord, tuple[int, HouseType]]:
        rr, cc = np.nonzero(self.house_owner >= 0)
        return {(int(r), int(c)): (int(self.house_owner[r, c]), HouseType(int(self.house_type[r, c])))
                for r, c in zip(rr, cc)}

    @property
    def resource_units(self) -> dict[Coord, tuple[Resource, int]]:
        return {p: (k, int(self.units[p])) for p, k in self.layout.regen.items() if self.units[p] > 0}

    def resource_totals(self) -> list[int]:
        return np.bincount(self._regen_kinds, weights=self.units[self._regen_rows, self._regen_cols],
                           minlength=3).astype(int).tolist() if len(self._regen_kinds) else [0, 0, 0]

    def passable(self, cell: Coord, agent_id: int) -> bool:
        """Whether ``agent_id`` could stand on ``cell`` (ignores its own position)."""
        r, c = cell
        if not (0 <= r < self.layout.height and 0 <= c < self.layout.width):
            return False
        if self.water[r, c]:
            return False
        occ = self.agent_at[r, c]
        if occ >= 0 and occ != agent_id:
            return False
        owner = self.house_owner[r, c]
        return owner < 0 or owner == agent_id

    def can_build_here(self, agent_id: int) -> bool:
        r, c = self.agents[agent_id].location
        return self.regen_kind[r, c] < 0 and self.house_owner[r, c] < 0

    def snapshot(self) -> dict:
        """Structural fingerprint used by determinism checks."""
        return {
            "step": self.step,
            "units": self.units.tolist(),
            "houses": sorted((k, v[0], int(v[1])) for k, v in self.houses.items()),
            "agents": [(a.location, tuple(a.inventory), tuple(a.escrow), a.coin, a.escrow_coin, a.labor)
                       for a in self.agents],
        }


def new_world(cfg: ScenarioConfig, seed: int) -> WorldState:
    return WorldState(cfg, generate_layout(cfg, seed), draw_skills(cfg, seed))


def step_move(world: WorldState, agent_id: int, direction: Direction,
              rng: np.random.Generator) -> MoveOutcome:
    agent = world.agents[agent_id]
    labor = world.cfg.labor
    agent.labor += labor.move
    dr, dc = DELTAS[Direction(direction)]
    r, c = agent.location
    target = (r + dr, c + dc)
    if not world.passable(target, agent_id):
        return MoveOutcome(moved=False)
    world.agent_at[r, c] = -1
    world.agent_at[target] = agent_id
    agent.location = target
    if world.units[target] <= 0:
        return MoveOutcome(moved=True)
    kind = Resource(int(world.regen_kind[target]))
    world.units[target] -= 1
    got = 1
    if rng.random() < agent.gather_bonus_prob:
        got += 1
        world.bonus[kind] += 1
    agent.inventory[kind] += got
    agent.labor += labor.gather
    return MoveOutcome(moved=True, gathered=kind, units=got)


def regen_resources(world: WorldState, rng: np.random.Generator) -> list[int]:
    """Stochastic respawn on regen cells below cap; returns units spawned per kind."""
    if not len(world._regen_kinds):
        return [0, 0, 0]
    rows, cols = world._regen_rows, world._regen_cols
    roll = rng.random(len(rows)) < world.cfg.layout.regen_prob
    grow = roll & (world.units[rows, cols] < world.cfg.layout.regen_cap)
    world.units[rows[grow], cols[grow]] += 1
    added = np.bincount(world._regen_kinds[grow], minlength=3).tolist()
    for k in range(3):
        world.spawned[k] += added[k]
    return added


def build_house(world: WorldState, agent_id: int, house: HouseType) -> float | None:
    """Build at the agent's cell. Returns coin earned, or None if rejected."""
    agent = world.agents[agent_id]
    house = HouseType(house)
    need = RECIPES[house]
    if any(agent.inventory[k] < 1 for k in need) or not world.can_build_here(agent_id):
        return None
    for k in need:
        agent.inventory[k] -= 1
        world.consumed[k] += 1
    r, c = agent.location
    world.house_owner[r, c] = agent_id
    world.house_type[r, c] = int(house)
    income = agent.build_skill[house]
    agent.coin += income
    agent.labor += world.cfg.labor.build
    world.houses_built[agent_id][house] += 1
    return income


def resource_totals(world: WorldState) -> dict[Resource, int]:
    return dict(zip(Resource, world.resource_totals()))


def conservation_gap(world: WorldState) -> list[int]:
    """Per-kind residual of the resource ledger; all zeros when consistent."""
    on_map = world.resource_totals()
    gaps = []
    for k in range(3):
        held = sum(a.inventory[k] + a.escrow[k] for a in world.agents)
        gaps.append(on_map[k] + held + world.consumed[k]
                    - world.spawned[k] - world.bonus[k] - world.initial_totals[k])
    return gaps
