"""Regenerate the bundled level files under src/textvin/games/.

The layouts are analogues of Freeway, Bomberman and Boulderchase built from a
fixed seed; re-running this script reproduces the shipped files exactly.
"""
from pathlib import Path

import numpy as np

from textvin.engine import (EntityDef, GameSpec, Interaction, serialize_game_spec,
                            validate_spec)

OUT = Path(__file__).resolve().parents[1] / "src" / "textvin" / "games"
N = 16
KILL = Interaction(-1.0, True, False)


def freeway(level):
    rng = np.random.default_rng([1, level])
    cars = [
        EntityDef("tancar", "horizontal-patrol", 0.5, KILL, "c", "left", wrap=True),
        EntityDef("redtruck", "horizontal-patrol", 1 / 3, KILL, "t", "right", wrap=True),
        EntityDef("bluebike", "horizontal-patrol", 1.0, KILL, "b", "left", wrap=True),
    ]
    finish = EntityDef("finishline", "static", 0.0, Interaction(1.0, True, False), "F")
    grid = [["."] * N for _ in range(N)]
    grid[0] = ["F"] * N
    lanes = [r for r in range(2, N - 2) if r % 2 == 0 or rng.random() < 0.3]
    for r in lanes:
        car = cars[int(rng.integers(len(cars)))]
        n_cars = 1 + int(rng.integers(1 + level // 2, 3 + level // 2))
        for c in rng.choice(N, size=min(n_cars, N // 2), replace=False):
            grid[r][int(c)] = car.glyph
    grid[N - 1][N // 2] = "A"
    return GameSpec(name=f"freeway_l{level}", game="freeway", rows=N, cols=N,
                    entities=(finish, *cars), layout=tuple("".join(r) for r in grid),
                    step_penalty=-0.01, max_steps=100, goal_condition="reach-cell")


def _walled(rng, pillars=True):
    grid = [["."] * N for _ in range(N)]
    for i in range(N):
        grid[0][i] = grid[N - 1][i] = grid[i][0] = grid[i][N - 1] = "W"
    if pillars:
        for r in range(2, N - 2, 2):
            for c in range(2, N - 2, 2):
                grid[r][c] = "W"
    return grid


def _free_cells(grid, rng, k):
    cells = [(r, c) for r in range(N) for c in range(N) if grid[r][c] == "."]
    idx = rng.choice(len(cells), size=k, replace=False)
    return [cells[int(i)] for i in idx]


def bomberman(level):
    rng = np.random.default_rng([2, level])
    ents = (
        EntityDef("bmwall", "static", 0.0, Interaction(), "W", solid=True),
        EntityDef("brick", "static", 0.0, Interaction(0.0, False, True), "x"),
        EntityDef("balloon", "random-walk", 0.5, KILL, "o"),
        EntityDef("spider", "chaser", 0.25, KILL, "s"),
        EntityDef("ghost", "fleer", 0.5, KILL, "g"),
        EntityDef("bmexit", "door", 0.0, Interaction(1.0, True, False), "E"),
    )
    grid = _walled(rng)
    spots = _free_cells(grid, rng, 20 + 2 * level)
    grid[spots[0][0]][spots[0][1]] = "A"
    grid[spots[1][0]][spots[1][1]] = "E"
    enemies = "osg"[: 1 + level % 3] + "o" * (level // 2)
    for (r, c), g in zip(spots[2:], enemies):
        grid[r][c] = g
    for r, c in spots[2 + len(enemies):]:
        grid[r][c] = "x"
    return GameSpec(name=f"bomberman_l{level}", game="bomberman", rows=N, cols=N,
                    entities=ents, layout=tuple("".join(r) for r in grid),
                    step_penalty=-0.01, max_steps=200, goal_condition="reach-cell")


def boulderchase(level):
    rng = np.random.default_rng([3, level])
    ents = (
        EntityDef("rockwall", "static", 0.0, Interaction(), "W", solid=True),
        EntityDef("dirt", "static", 0.0, Interaction(0.0, False, True), "d"),
        EntityDef("diamond", "resource", 0.0, Interaction(1.0, False, True), "*"),
        EntityDef("scorpion", "vertical-patrol", 0.5, KILL, "s"),
        EntityDef("bat", "horizontal-patrol", 0.5, KILL, "b"),
        EntityDef("bcexit", "door", 0.0, Interaction(1.0, True, False), "E"),
    )
    grid = _walled(rng, pillars=False)
    spots = _free_cells(grid, rng, 60)
    grid[spots[0][0]][spots[0][1]] = "A"
    grid[spots[1][0]][spots[1][1]] = "E"
    n_diamonds = 3 + level
    for r, c in spots[2:2 + n_diamonds]:
        grid[r][c] = "*"
    k = 2 + n_diamonds
    for r, c in spots[k:k + 1 + level // 2]:
        grid[r][c] = "s"
    k += 1 + level // 2
    for r, c in spots[k:k + 1 + (level + 1) // 2]:
        grid[r][c] = "b"
    k += 1 + (level + 1) // 2
    for r, c in spots[k:]:
        grid[r][c] = "d"
    return GameSpec(name=f"boulderchase_l{level}", game="boulderchase", rows=N, cols=N,
                    entities=ents, layout=tuple("".join(r) for r in grid),
                    step_penalty=-0.01, max_steps=250, goal_condition="collect-and-exit")


FRIEND = Interaction(1.0, False, True)

FE_POOL = (
    # friends
    EntityDef("fairy", "random-walk", 0.5, FRIEND, "a"),
    EntityDef("unicorn", "horizontal-patrol", 0.5, FRIEND, "b", "right"),
    EntityDef("puppy", "chaser", 0.25, FRIEND, "c"),
    EntityDef("kitten", "fleer", 0.25, FRIEND, "d"),
    EntityDef("angel", "vertical-patrol", 0.5, FRIEND, "e", "down"),
    EntityDef("dolphin", "friend", 0.5, FRIEND, "f"),
    EntityDef("panda", "static", 0.0, FRIEND, "g"),
    EntityDef("bunny", "random-walk", 0.25, FRIEND, "h"),
    EntityDef("lamb", "horizontal-patrol", 0.25, FRIEND, "i", "left"),
    EntityDef("owl", "vertical-patrol", 0.25, FRIEND, "j", "up"),
    # enemies
    EntityDef("goblin", "chaser", 0.25, KILL, "k"),
    EntityDef("ogre", "random-walk", 0.5, KILL, "l"),
    EntityDef("wraith", "horizontal-patrol", 0.5, KILL, "m", "left"),
    EntityDef("viper", "vertical-patrol", 0.5, KILL, "n", "up"),
    EntityDef("demon", "shooter", 0.25, KILL, "o", "down"),
    EntityDef("troll", "static", 0.0, KILL, "p"),
    EntityDef("hornet", "random-walk", 0.25, KILL, "q"),
    EntityDef("zombie", "chaser", 0.25, KILL, "r"),
    EntityDef("vampire", "enemy", 0.5, KILL, "s"),
    EntityDef("wolf", "fleer", 0.5, KILL, "t"),
)


def fe_pool_spec():
    grid = [["."] * N for _ in range(N)]
    for i, e in enumerate(FE_POOL):
        r, c = divmod(i, 5)
        grid[2 + 3 * r][1 + 3 * c] = e.glyph
    grid[N - 1][N - 1] = "A"
    return GameSpec(name="fe_pool", game="fe", rows=N, cols=N, entities=FE_POOL,
                    layout=tuple("".join(r) for r in grid), step_penalty=-0.01,
                    max_steps=100, goal_condition="meet-all-friends")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    specs = [fe_pool_spec()]
    for level in range(1, 6):
        specs += [freeway(level), bomberman(level), boulderchase(level)]
    for spec in specs:
        validate_spec(spec)
        (OUT / f"{spec.name}.game").write_text(serialize_game_spec(spec))
        print("wrote", spec.name)


if __name__ == "__main__":
    main()
