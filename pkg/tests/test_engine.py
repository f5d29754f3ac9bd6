import dataclasses
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textvin import suite
from textvin.engine import (AVATAR, EntityDef, GameSpec, Interaction, InvalidSpec,
                            MalformedSpec, PoolTooSmall, SteppedTerminalState,
                            check_suite, max_episode_reward, parse_game_spec, reset,
                            sample_fe_instance, serialize_game_spec, speed_up, step,
                            validate_spec)

FREEWAY = """\
[meta]
name = mini_freeway
game = freeway
rows = 16
cols = 16

[entities]
c = tancar horizontal-patrol speed=0.5 dir=left wrap=1
t = redtruck horizontal-patrol speed=1 dir=right wrap=1
b = bluebike horizontal-patrol speed=0.25 dir=left wrap=1
F = finishline static

[rewards]
tancar = -1.0 terminate
redtruck = -1.0 terminate
bluebike = -1.0 terminate
finishline = 1.0 terminate

[layout]
FFFFFFFFFFFFFFFF
................
...c......c.....
................
.......t........
................
.b..............
................
................
................
................
................
................
................
................
........A.......
"""


def tiny(layout, entities=(), goal="reach-cell", max_steps=50, penalty=-0.01):
    return GameSpec(name="t", game="t", rows=len(layout), cols=len(layout[0]),
                    entities=tuple(entities), layout=tuple(layout), step_penalty=penalty,
                    max_steps=max_steps, goal_condition=goal)


def test_parse_freeway_style_spec():
    spec = parse_game_spec(FREEWAY)
    assert spec.grid_size == (16, 16)
    movers = [e for e in spec.entities if e.behavior == "horizontal-patrol"]
    assert len(movers) == 3
    assert spec.entity("tancar").interaction == Interaction(-1.0, True, False)
    assert spec.avatar_start() == (15, 8)


def test_missing_avatar_is_invalid():
    text = FREEWAY.replace("........A.......", "................")
    with pytest.raises(InvalidSpec) as exc:
        parse_game_spec(text)
    assert exc.value.field == "layout"


def test_two_avatars_is_invalid():
    text = FREEWAY.replace("................\n...c", "A...............\n...c", 1)
    with pytest.raises(InvalidSpec):
        parse_game_spec(text)


def test_undeclared_glyph_is_invalid():
    text = FREEWAY.replace(".b......", ".z......")
    with pytest.raises(InvalidSpec, match="'z'"):
        parse_game_spec(text)


@pytest.mark.parametrize("bad, line", [
    ("[bogus]\n", 1),
    ("[meta]\nname\n", 2),
    ("[meta]\ncolour = red\n", 2),
    ("rows = 3\n", 1),
])
def test_malformed_reports_line(bad, line):
    with pytest.raises(MalformedSpec) as exc:
        parse_game_spec(bad)
    assert exc.value.line == line


def test_bad_speed_and_solid_mover_rejected():
    with pytest.raises(InvalidSpec):
        parse_game_spec(FREEWAY.replace("speed=0.5", "speed=1.5"))
    with pytest.raises(InvalidSpec):
        parse_game_spec(FREEWAY.replace("dir=left wrap=1\nt", "dir=left solid=1\nt"))


def test_non_finite_reward_rejected():
    with pytest.raises(InvalidSpec):
        parse_game_spec(FREEWAY.replace("finishline = 1.0", "finishline = inf"))


@pytest.mark.parametrize("name", suite.bundled_names())
def test_bundled_round_trip(name):
    text = suite.bundled_text(name)
    spec = parse_game_spec(text)
    again = parse_game_spec(serialize_game_spec(spec))
    assert again == spec
    assert serialize_game_spec(again) == serialize_game_spec(spec)


def test_bundled_files_are_canonical():
    for name in suite.bundled_names():
        text = suite.bundled_text(name)
        assert serialize_game_spec(parse_game_spec(text)) == text


def test_bundled_reward_ceilings():
    for spec in suite.family_levels("freeway") + suite.family_levels("bomberman"):
        assert max_episode_reward(spec) == 1.0
    for spec in suite.fe_instances(20, seed=3):
        assert max_episode_reward(spec) <= 2.0


def test_bundled_suite_symbols_not_shared():
    specs = [suite.load_bundled(n) for n in suite.bundled_names()]
    check_suite(specs)
    clash = dataclasses.replace(tiny(["Ax"], [EntityDef("tancar", "static", glyph="x")]),
                                game="other")
    with pytest.raises(InvalidSpec):
        check_suite(specs + [clash])


def test_reset_is_deterministic():
    spec = suite.load_bundled("freeway_l1")
    assert reset(spec, 7) == reset(spec, 7)
    assert reset(spec, 7).step == 0 and reset(spec, 7).alive


def test_reset_avatar_at_layout_cell():
    spec = suite.load_bundled("bomberman_l1")
    assert reset(spec, 3).avatar_pos == spec.avatar_start()


def test_reset_copies_layout():
    spec = parse_game_spec(FREEWAY)
    grid = reset(spec, 0).grid
    by_glyph = {e.glyph: e.symbol for e in spec.entities}
    for r, line in enumerate(spec.layout):
        for c, ch in enumerate(line):
            want = {AVATAR} if ch == "A" else set() if ch == "." else {by_glyph[ch]}
            assert grid[r][c] == want


def test_horizontal_patrol_moves_right():
    d = EntityDef("car", "horizontal-patrol", 1.0, glyph="c", direction="right")
    layout = ["A......."] + ["........"] * 4 + ["...c...."] + ["........"] * 2
    s = reset(tiny(layout, [d]), 0)
    s2, _, _ = step(s, 4, np.random.default_rng(0))
    (e,) = s2.entities
    assert (e.row, e.col) == (5, 4)


def test_patrol_bounces_at_edge():
    d = EntityDef("car", "horizontal-patrol", 1.0, glyph="c", direction="right")
    s = reset(tiny(["A..c"], [d]), 0)
    s, _, _ = step(s, 4, np.random.default_rng(0))
    assert s.entities[0].col == 3 and s.entities[0].dc == -1
    s, _, _ = step(s, 4, np.random.default_rng(0))
    assert s.entities[0].col == 2


def test_speed_half_moves_every_other_step():
    d = EntityDef("car", "horizontal-patrol", 0.5, glyph="c", direction="right", wrap=True)
    s = reset(tiny(["A.......", "c......."], [d]), 0)
    cols = []
    rng = np.random.default_rng(0)
    for _ in range(4):
        s, _, _ = step(s, 4, rng)
        cols.append(s.entities[0].col)
    assert cols == [0, 1, 1, 2]


def _bfs(layout, start, blocked=frozenset()):
    rows, cols = len(layout), len(layout[0])
    dist = {start: 0}
    q = deque([start])
    while q:
        r, c = q.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            n = (r + dr, c + dc)
            if 0 <= n[0] < rows and 0 <= n[1] < cols and n not in dist and n not in blocked:
                dist[n] = dist[(r, c)] + 1
                q.append(n)
    return dist


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 63), st.integers(0, 63), st.integers(0, 10_000))
def test_chaser_never_moves_away(a_cell, c_cell, seed):
    if a_cell == c_cell:
        return
    grid = [["."] * 8 for _ in range(8)]
    ar, ac = divmod(a_cell, 8)
    cr, cc = divmod(c_cell, 8)
    grid[ar][ac] = "A"
    grid[cr][cc] = "x"
    layout = ["".join(r) for r in grid]
    d = EntityDef("hound", "chaser", 1.0, glyph="x")
    s = reset(tiny(layout, [d]), 0)
    s2, _, _ = step(s, 4, np.random.default_rng(seed))
    if not s2.entities:
        return
    before = _bfs(layout, (ar, ac))[(cr, cc)]
    e = s2.entities[0]
    after = _bfs(layout, (ar, ac))[(e.row, e.col)]
    assert after <= before
    assert abs(e.row - ar) + abs(e.col - ac) <= abs(cr - ar) + abs(cc - ac)


def test_goal_reward_and_termination():
    goal = EntityDef("beacon", "static", glyph="G", interaction=Interaction(1.0, True))
    s = reset(tiny(["AG"], [goal]), 0)
    s2, r, done = step(s, 3, np.random.default_rng(0))
    assert r == pytest.approx(0.99, abs=1e-12)
    assert done and not s2.alive


def test_stepping_terminal_state_raises():
    goal = EntityDef("beacon", "static", glyph="G", interaction=Interaction(1.0, True))
    s = reset(tiny(["AG"], [goal]), 0)
    s2, _, _ = step(s, 3, np.random.default_rng(0))
    with pytest.raises(SteppedTerminalState):
        step(s2, 0, np.random.default_rng(0))


def test_solid_walls_block_avatar():
    wall = EntityDef("brickwall", "static", glyph="W", solid=True)
    s = reset(tiny(["AW."], [wall]), 0)
    s2, _, _ = step(s, 3, np.random.default_rng(0))
    assert s2.avatar_pos == (0, 0)


def test_enemy_contact_kills():
    foe = EntityDef("ogre", "static", glyph="o", interaction=Interaction(-1.0, True))
    s = reset(tiny(["Ao."], [foe]), 0)
    s2, r, done = step(s, 3, np.random.default_rng(0))
    assert done and r == pytest.approx(-1.01)


def test_friends_consumed_and_episode_ends():
    friend = EntityDef("fairy", "static", glyph="f", interaction=Interaction(1.0, False, True))
    s = reset(tiny(["Aff"], [friend], goal="meet-all-friends"), 0)
    rng = np.random.default_rng(0)
    s, r1, d1 = step(s, 3, rng)
    s, r2, d2 = step(s, 3, rng)
    assert (r1, d1) == (pytest.approx(0.99), False)
    assert (r2, d2) == (pytest.approx(0.99), True)
    assert not s.entities


def test_door_closed_until_resources_collected():
    ents = [EntityDef("gem", "resource", glyph="g", interaction=Interaction(1.0, False, True)),
            EntityDef("gate", "door", glyph="E", interaction=Interaction(1.0, True))]
    spec = tiny(["EAg"], ents, goal="collect-and-exit")
    rng = np.random.default_rng(0)
    s = reset(spec, 0)
    s1, r, done = step(s, 2, rng)
    assert not done and r == pytest.approx(-0.01)
    s = reset(spec, 0)
    s, r, _ = step(s, 3, rng)
    assert r == pytest.approx(0.99)
    s, _, _ = step(s, 2, rng)
    s, r, done = step(s, 2, rng)
    assert done and r == pytest.approx(0.99)


def test_shooter_projectile_kills():
    gun = EntityDef("turret", "shooter", 1.0, glyph="s", direction="down",
                    interaction=Interaction(0.0))
    s = reset(tiny(["s", ".", ".", "A"], [gun]), 0)
    rng = np.random.default_rng(0)
    rewards = []
    done = False
    while not done:
        s, r, done = step(s, 4, rng)
        rewards.append(r)
    assert rewards[-1] == pytest.approx(-1.01)
    assert len(rewards) <= 3


def test_max_steps_terminates():
    s = reset(tiny(["A.."], max_steps=3), 0)
    rng = np.random.default_rng(0)
    for i in range(3):
        s, _, done = step(s, 4, rng)
    assert done and s.step == 3


def test_invalid_action():
    s = reset(tiny(["A.."]), 0)
    with pytest.raises(ValueError):
        step(s, 5, np.random.default_rng(0))


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(suite.bundled_names()), st.integers(0, 1000),
       st.lists(st.integers(0, 4), min_size=1, max_size=60))
def test_determinism_and_conservation(name, seed, actions):
    spec = suite.load_bundled(name)
    consumable = {e.symbol for e in spec.entities if e.interaction.consume}
    still = {e.symbol for e in spec.entities if e.behavior in ("static", "resource", "door")}

    def run():
        s = reset(spec, seed)
        rng = np.random.default_rng(seed)
        trace = [s]
        for a in actions:
            if not s.alive:
                break
            s, r, done = step(s, a, rng)
            assert np.isfinite(r)
            trace.append(s)
        return trace

    t1, t2 = run(), run()
    assert t1 == t2
    for prev, nxt in zip(t1, t1[1:]):
        before = {e.uid for e in prev.entities if not e.symbol.endswith("_shot")}
        after = {e.uid for e in nxt.entities if not e.symbol.endswith("_shot")}
        assert after <= before
        for e in prev.entities:
            if e.uid not in after and not e.symbol.endswith("_shot"):
                assert e.symbol in consumable
        placed = {(e.uid, e.row, e.col) for e in prev.entities if e.symbol in still}
        assert {(e.uid, e.row, e.col) for e in nxt.entities if e.symbol in still} <= placed
        assert nxt.step <= spec.max_steps
        r, c = nxt.avatar_pos
        assert 0 <= r < spec.rows and 0 <= c < spec.cols


def test_fe_sampling_deterministic_and_checked():
    pool = suite.fe_pool()
    assert len(pool) == 20
    assert sample_fe_instance(pool, 4, seed=1) == sample_fe_instance(pool, 4, seed=1)
    with pytest.raises(PoolTooSmall):
        sample_fe_instance(pool[:3], 4, seed=0)


def test_fe_sampling_covers_pool():
    pool = suite.fe_pool()
    seen = set()
    for seed in range(1000):
        spec = sample_fe_instance(pool, 4, seed=seed)
        assert len(spec.entities) == 4
        placed = [ch for line in spec.layout for ch in line if ch not in ".A"]
        assert len(placed) == 4
        seen.update(e.symbol for e in spec.entities)
    assert seen == {e.symbol for e in pool}


def test_speed_up_doubles_movers():
    spec = suite.fe_instances(1, seed=0)[0]
    fast = speed_up(spec, 2.0)
    for a, b in zip(spec.entities, fast.entities):
        if a.behavior in ("static", "resource", "door"):
            assert b.speed == 0
        else:
            assert b.speed == min(1.0, 2 * a.speed)
    validate_spec(fast)


def test_split_pool_disjoint():
    a, b = suite.split_fe_pool()
    assert not {e.symbol for e in a} & {e.symbol for e in b}
    assert sum(e.is_friend for e in a) == sum(e.is_friend for e in b) == 5


def test_scenario_shapes():
    for name, (_, _, n_src, n_tgt) in suite.SCENARIOS.items():
        src, tgt = suite.scenario(name, seed=0)
        assert (len(src), len(tgt)) == (n_src, n_tgt)
        assert all(s.grid_size == (16, 16) for s in src + tgt)


def test_nav_shortest_path():
    spec = suite.nav_game()
    assert suite.shortest_path(spec) == 10
