import numpy as np
import pytest

from gtbsim.config import ConfigError, scenario
from gtbsim.world import (
    Direction,
    HouseType,
    Resource,
    WorldLayout,
    WorldState,
    build_house,
    conservation_gap,
    draw_skills,
    generate_layout,
    new_world,
    regen_resources,
    resource_totals,
    step_move,
)

WOOD, STONE, IRON = Resource


class NoBonus:
    def random(self):
        return 0.99


class AlwaysBonus:
    def random(self):
        return 0.0


def tiny_world(water=(), regen=None, spawn=((1, 1),), size=4, skills=None, **overrides):
    cfg = scenario("uniform", size=size, n_agents=len(spawn), **overrides)
    layout = WorldLayout(size, size, "uniform", frozenset(water), dict(regen or {}), tuple(spawn))
    if skills is None:
        skills = np.full((len(spawn), 3), 20.0)
    return WorldState(cfg, layout, np.asarray(skills, dtype=float))


# -- layouts ----------------------------------------------------------------------


def test_band_counts_and_stripes():
    cfg = scenario("band")
    lay = generate_layout(cfg, seed=3)
    assert [lay.regen_count(k) for k in Resource] == [40, 40, 36]
    water_cols = sorted({c for _, c in lay.water})
    assert len(water_cols) == 2
    assert len(lay.water) == 2 * cfg.layout.height
    # kind k lives strictly inside stripe k
    stripe_of = np.searchsorted(water_cols, [c for _, c in lay.regen])
    assert stripe_of.tolist() == [int(k) for k in lay.regen.values()]


@pytest.mark.parametrize("seed", range(5))
def test_band_stripes_mutually_unreachable(seed):
    lay = generate_layout(scenario("band"), seed)
    for p in lay.spawn_points:
        kinds = {k for c, k in lay.regen.items() if c in lay.reachable(p)}
        assert len(kinds) == 1


@pytest.mark.parametrize("seed", range(5))
def test_uniform_counts_and_reachability(seed):
    lay = generate_layout(scenario("uniform"), seed)
    assert [lay.regen_count(k) for k in Resource] == [38, 38, 36]
    assert not lay.water
    for p in lay.spawn_points:
        assert set(lay.regen) <= lay.reachable(p)


def test_uniform_avoids_same_kind_neighbours():
    lay = generate_layout(scenario("uniform"), 0)
    for (r, c), k in lay.regen.items():
        for nb in ((r + 1, c), (r, c + 1)):
            assert lay.regen.get(nb) != k


@pytest.mark.parametrize("kind", ["band", "uniform"])
def test_zero_counts_is_valid(kind):
    cfg = scenario(kind)
    cfg.layout.regen_counts = {"wood": 0, "stone": 0, "iron": 0}
    w = new_world(cfg, 0)
    assert w.resource_totals() == [0, 0, 0]
    assert regen_resources(w, np.random.default_rng(0)) == [0, 0, 0]


def test_layout_disjointness():
    for kind in ("band", "uniform"):
        lay = generate_layout(scenario(kind), 11)
        spawn = set(lay.spawn_points)
        assert len(spawn) == len(lay.spawn_points)
        assert not spawn & set(lay.regen) and not spawn & lay.water and not lay.water & set(lay.regen)


def test_layout_deterministic():
    cfg = scenario("band")
    assert generate_layout(cfg, 5).dump() == generate_layout(cfg, 5).dump()
    assert generate_layout(cfg, 5).dump() != generate_layout(cfg, 6).dump()


def test_dump_characters():
    text = generate_layout(scenario("band"), 0).dump()
    rows = text.splitlines()
    assert len(rows) == 25 and all(len(r) == 25 for r in rows)
    assert text.count("W") == 50
    assert (text.count("w"), text.count("s"), text.count("i")) == (40, 40, 36)


def test_too_many_regen_cells_named_error():
    cfg = scenario("band", size=7)
    cfg.layout.regen_counts = {"wood": 40, "stone": 1, "iron": 1}
    with pytest.raises(ConfigError, match="wood"):
        generate_layout(cfg, 0)


def test_band_too_narrow():
    cfg = scenario("band", size=4)
    with pytest.raises(ConfigError, match="width"):
        generate_layout(cfg, 0)


def test_skills_clipped_to_range():
    sk = draw_skills(scenario("uniform", n_agents=200), 0)
    assert sk.shape == (200, 3)
    assert sk.min() >= 10 and sk.max() <= 30
    # P(10(1+X) > 30) = 3^-4 for a Lomax(4) draw, so some values hit the clip
    assert (sk == 30).any()
    assert np.median(sk) == pytest.approx(10 * 2 ** 0.25, abs=0.5)


# -- movement and gathering ---------------------------------------------------------------


def test_gather_one_unit_without_bonus():
    w = tiny_world(regen={(1, 2): WOOD})
    out = step_move(w, 0, Direction.RIGHT, NoBonus())
    assert out.moved and out.gathered == WOOD and out.units == 1
    a = w.agents[0]
    assert a.inventory == [1, 0, 0] and w.units[1, 2] == 0
    assert a.labor == pytest.approx(0.21 + 0.21)


def test_gather_bonus_unit_is_tracked():
    w = tiny_world(regen={(1, 2): STONE})
    out = step_move(w, 0, Direction.RIGHT, AlwaysBonus())
    assert out.units == 2 and w.agents[0].inventory[STONE] == 2
    assert w.bonus == [0, 1, 0]
    assert conservation_gap(w) == [0, 0, 0]


def test_move_into_water_is_blocked_but_costs_labor():
    w = tiny_world(water={(0, 1)})
    out = step_move(w, 0, Direction.UP, NoBonus())
    assert not out.moved and w.agents[0].location == (1, 1)
    assert w.agents[0].labor == pytest.approx(0.21)


def test_move_off_grid_and_onto_agent_blocked():
    w = tiny_world(spawn=((0, 0), (0, 1)))
    assert not step_move(w, 0, Direction.UP, NoBonus()).moved
    assert not step_move(w, 0, Direction.RIGHT, NoBonus()).moved
    assert [a.location for a in w.agents] == [(0, 0), (0, 1)]


def test_move_onto_empty_cell_no_gather_labor():
    w = tiny_world()
    out = step_move(w, 0, Direction.DOWN, NoBonus())
    assert out.moved and out.gathered is None
    assert w.agents[0].location == (2, 1) and w.agent_at[2, 1] == 0 and w.agent_at[1, 1] == -1
    assert w.agents[0].labor == pytest.approx(0.21)


def test_other_agents_house_blocks_own_does_not():
    w = tiny_world(spawn=((1, 1), (3, 3)))
    w.agents[0].inventory = [1, 1, 0]
    build_house(w, 0, HouseType.RED)
    step_move(w, 0, Direction.RIGHT, NoBonus())
    assert step_move(w, 0, Direction.LEFT, NoBonus()).moved
    w.agents[1].location = (2, 1)
    w.agent_at[3, 3], w.agent_at[2, 1] = -1, 1
    step_move(w, 0, Direction.RIGHT, NoBonus())
    assert not step_move(w, 1, Direction.UP, NoBonus()).moved


# -- regeneration -------------------------------------------------------------------------


def test_regen_probability_zero_leaves_world():
    w = new_world(scenario("uniform", regen_prob=0.0), 0)
    w.units[:] = 0
    assert regen_resources(w, np.random.default_rng(0)) == [0, 0, 0]
    assert w.units.sum() == 0


def test_regen_probability_one_refills_to_cap():
    w = new_world(scenario("uniform", regen_prob=1.0), 0)
    w.units[:] = 0
    regen_resources(w, np.random.default_rng(0))
    assert w.resource_totals() == [38, 38, 36]
    assert w.units.max() == 1
    assert (w.units[w.regen_kind < 0] == 0).all()


def test_regen_spawn_count_binomial():
    # 10^5 cell-steps at p = 0.01: mean 1000, sd sqrt(990)
    regen = {(r, c): WOOD for r in range(10) for c in range(10)}
    w = tiny_world(regen=regen, spawn=((10, 10),), size=11, regen_prob=0.01)
    rng = np.random.default_rng(2024)
    total = 0
    for _ in range(1000):
        w.units[:] = 0
        total += regen_resources(w, rng)[WOOD]
    assert abs(total - 1000) <= 3 * np.sqrt(1000 * 0.99)


def test_regen_respects_cap():
    w = new_world(scenario("uniform", regen_prob=1.0), 0)
    before = w.resource_totals()
    assert regen_resources(w, np.random.default_rng(0)) == [0, 0, 0]
    assert w.resource_totals() == before


# -- building -----------------------------------------------------------------------------


def test_build_pays_skill_and_consumes():
    w = tiny_world(skills=[[17.0, 22.0, 25.0]])
    a = w.agents[0]
    a.inventory = [1, 1, 0]
    assert build_house(w, 0, HouseType.RED) == 17.0
    assert a.coin == 17.0 and a.inventory == [0, 0, 0]
    assert a.labor == pytest.approx(2.1)
    assert w.houses == {(1, 1): (0, HouseType.RED)}
    assert w.consumed == [1, 1, 0]


def test_build_on_existing_house_rejected():
    w = tiny_world()
    a = w.agents[0]
    a.inventory = [2, 2, 0]
    build_house(w, 0, HouseType.RED)
    before = (a.coin, a.labor, list(a.inventory))
    assert build_house(w, 0, HouseType.RED) is None
    assert (a.coin, a.labor, list(a.inventory)) == before


def test_build_without_iron_rejected():
    w = tiny_world()
    w.agents[0].inventory = [1, 1, 0]
    assert build_house(w, 0, HouseType.BLUE) is None
    assert w.agents[0].labor == 0.0 and w.agents[0].inventory == [1, 1, 0]


def test_build_on_regen_cell_rejected():
    w = tiny_world(regen={(1, 2): IRON})
    w.units[1, 2] = 0
    step_move(w, 0, Direction.RIGHT, NoBonus())
    w.agents[0].inventory = [1, 1, 1]
    assert build_house(w, 0, HouseType.GREEN) is None


# -- totals and conservation --------------------------------------------------------------


def test_resource_totals_empty_and_after_spawn():
    w = tiny_world()
    assert resource_totals(w) == {WOOD: 0, STONE: 0, IRON: 0}
    w = tiny_world(regen={(0, 0): WOOD}, regen_prob=1.0)
    w.units[0, 0] = 0
    regen_resources(w, np.random.default_rng(0))
    assert resource_totals(w)[WOOD] == 1


@pytest.mark.parametrize("seed", range(3))
def test_conservation_under_random_play(seed):
    w = new_world(scenario("uniform", size=12, regen_prob=0.2), seed)
    rng = np.random.default_rng(seed)
    for _ in range(400):
        for i in rng.permutation(len(w.agents)):
            a = w.agents[i]
            if rng.random() < 0.2 and a.inventory[0] and a.inventory[1]:
                build_house(w, int(i), HouseType.RED)
            else:
                step_move(w, int(i), Direction(int(rng.integers(4))), rng)
        regen_resources(w, rng)
        assert conservation_gap(w) == [0, 0, 0]
        locs = [a.location for a in w.agents]
        assert len(set(locs)) == len(locs)
        assert all(not w.water[p] for p in locs)
    assert (w.units[w.regen_kind < 0] == 0).all()
    assert (w.house_owner[w.regen_kind >= 0] < 0).all()


def test_same_seed_same_trajectory():
    def run(seed):
        w = new_world(scenario("band"), seed)
        rng = np.random.default_rng(seed)
        for _ in range(200):
            for i in range(len(w.agents)):
                step_move(w, i, Direction(int(rng.integers(4))), rng)
            regen_resources(w, rng)
        return w.snapshot()

    assert run(4) == run(4)
