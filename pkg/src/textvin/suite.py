"""Bundled games, the F&E entity pool and the named transfer scenarios."""
from __future__ import annotations

from collections import deque
from importlib import resources

from .engine import (EntityDef, GameSpec, Interaction, parse_game_spec,
                     sample_fe_instance, speed_up, validate_spec)

GAMES_PACKAGE = "textvin.games"
FAMILIES = ("freeway", "bomberman", "boulderchase")
LEVELS = (1, 2, 3, 4, 5)

# (source family, target family, n_source, n_target)
SCENARIOS = {
    "fe1_to_fe2": ("fe1", "fe2", 7, 3),
    "fe1_to_freeway": ("fe1", "freeway", 7, 5),
    "bomberman_to_boulderchase": ("bomberman", "boulderchase", 5, 5),
}


class UnknownGame(KeyError):
    pass


def bundled_names():
    files = resources.files(GAMES_PACKAGE)
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".game"))


def bundled_text(name):
    path = resources.files(GAMES_PACKAGE) / f"{name}.game"
    if not path.is_file():
        raise UnknownGame(name)
    return path.read_text()


def load_bundled(name):
    return parse_game_spec(bundled_text(name))


def family_levels(family):
    return [load_bundled(f"{family}_l{lv}") for lv in LEVELS]


def fe_pool():
    """The twenty F&E entity definitions (ten friends, ten enemies)."""
    return load_bundled("fe_pool").entities


def split_fe_pool(pool=None):
    """Two disjoint halves with the same behaviour mix, for unseen-entity transfer.

    Each half holds five friends and five enemies; the halves share effect
    templates but no entity symbols.
    """
    pool = tuple(pool or fe_pool())
    friends = [e for e in pool if e.is_friend]
    enemies = [e for e in pool if not e.is_friend]
    a = tuple(friends[:len(friends) // 2] + enemies[:len(enemies) // 2])
    b = tuple(friends[len(friends) // 2:] + enemies[len(enemies) // 2:])
    return a, b


def fe_instances(n, seed, pool=None, faster=False, rows=16, cols=16, max_steps=100,
                 prefix="fe1"):
    """``n`` F&E instances; ``faster`` doubles every mover's speed (F&E-2)."""
    pool = pool or fe_pool()
    out = []
    for i in range(n):
        spec = sample_fe_instance(pool, 4, seed=seed * 1000 + i, rows=rows, cols=cols,
                                  max_steps=max_steps, name=f"{prefix}_{seed}_{i}",
                                  game="fe2" if faster else "fe1")
        out.append(speed_up(spec, 2.0) if faster else spec)
    return out


def _family(name, n, seed, offset):
    if name == "fe1":
        return fe_instances(n, seed + offset, prefix="fe1")
    if name == "fe2":
        return fe_instances(n, seed + offset, faster=True, prefix="fe2")
    specs = family_levels(name)
    if n > len(specs):
        raise ValueError(f"{name} has only {len(specs)} bundled levels")
    return specs[:n]


def scenario(name, seed=0):
    """``(source_specs, target_specs)`` for a named transfer scenario."""
    if name not in SCENARIOS:
        raise UnknownGame(name)
    src, tgt, n_src, n_tgt = SCENARIOS[name]
    # target F&E instances draw from a disjoint seed range
    return _family(src, n_src, seed, 0), _family(tgt, n_tgt, seed, 500)


def nav_game(rows=8, cols=8, start=(1, 1), goal=(6, 6), goal_reward=1.0,
             step_penalty=-0.01, max_steps=50, name="nav"):
    """Single-goal navigation: walk to a static beacon."""
    grid = [["."] * cols for _ in range(rows)]
    grid[start[0]][start[1]] = "A"
    grid[goal[0]][goal[1]] = "G"
    spec = GameSpec(
        name=name, game="nav", rows=rows, cols=cols,
        entities=(EntityDef("beacon", "static", 0.0, Interaction(goal_reward, True, False),
                            glyph="G"),),
        layout=tuple("".join(r) for r in grid), step_penalty=step_penalty,
        max_steps=max_steps, goal_condition="reach-cell")
    validate_spec(spec)
    return spec


def shortest_path(spec):
    """BFS step count from the avatar to the nearest terminating positive cell."""
    goals = {d.glyph for d in spec.entities
             if d.interaction.terminate and d.interaction.reward > 0}
    solid = {d.glyph for d in spec.entities if d.solid}
    start = spec.avatar_start()
    seen = {start: 0}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        if spec.layout[r][c] in goals:
            return seen[(r, c)]
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < spec.rows and 0 <= nc < spec.cols and (nr, nc) not in seen \
                    and spec.layout[nr][nc] not in solid:
                seen[(nr, nc)] = seen[(r, c)] + 1
                queue.append((nr, nc))
    return None
