"""Seedable grid-world game engine and its text game-description format.

A game is a grid of cells, each holding any number of entities. The avatar
is implicit (layout glyph ``A``, entity symbol ``avatar``); every other
entity is declared in the ``[entities]`` section and placed in ``[layout]``.

Document format::

    [meta]
    name = freeway_l1
    game = freeway
    rows = 16
    cols = 16
    step_penalty = -0.01
    max_steps = 120
    goal = reach-cell

    [entities]
    c = tancar horizontal-patrol speed=0.5 dir=left wrap=1
    W = wall static solid=1

    [rewards]
    tancar = -1.0 terminate

    [layout]
    WWWW...

Actions are ``0=up, 1=down, 2=left, 3=right, 4=no-op``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

ACTIONS = ("up", "down", "left", "right", "noop")
N_ACTIONS = len(ACTIONS)
ACTION_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
DIRECTIONS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}

AVATAR = "avatar"
AVATAR_GLYPH = "A"
EMPTY_GLYPH = "."

MOVERS = (
    "horizontal-patrol",
    "vertical-patrol",
    "random-walk",
    "chaser",
    "fleer",
    "shooter",
    "friend",
    "enemy",
)
STILL = ("static", "resource", "door")
BEHAVIORS = STILL + MOVERS
GOALS = ("reach-cell", "meet-all-friends", "collect-and-exit")

SHOT_SUFFIX = "_shot"
SHOT_INTERACTION_REWARD = -1.0


class SpecError(ValueError):
    """Base class for game-description problems."""


class MalformedSpec(SpecError):
    """The document does not follow the section/line syntax."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class InvalidSpec(SpecError):
    """The document parses but violates a GameSpec invariant."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class SteppedTerminalState(RuntimeError):
    pass


class PoolTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class Interaction:
    """Effect of avatar contact: reward delta, episode end, entity removal."""

    reward: float = 0.0
    terminate: bool = False
    consume: bool = False


@dataclass(frozen=True)
class EntityDef:
    symbol: str
    behavior: str
    speed: float = 0.0
    interaction: Interaction = Interaction()
    glyph: str = "?"
    direction: str | None = None
    solid: bool = False
    wrap: bool = False

    @property
    def period(self):
        """Move (or fire) every ``period``-th step; 0 for still entities."""
        if self.speed <= 0:
            return 0
        return max(1, math.ceil(1.0 / self.speed - 1e-9))

    @property
    def is_friend(self):
        i = self.interaction
        return (self.behavior not in ("resource", "door") and i.reward > 0
                and i.consume and not i.terminate)

    @property
    def shot_symbol(self):
        return self.symbol + SHOT_SUFFIX


@dataclass(frozen=True)
class GameSpec:
    name: str
    rows: int
    cols: int
    entities: tuple[EntityDef, ...]
    layout: tuple[str, ...]
    step_penalty: float = -0.01
    max_steps: int = 100
    goal_condition: str = "reach-cell"
    game: str = ""

    @property
    def grid_size(self):
        return (self.rows, self.cols)

    def entity(self, symbol):
        for e in self.entities:
            if e.symbol == symbol:
                return e
        if symbol.endswith(SHOT_SUFFIX):
            return _shot_def(symbol)
        raise KeyError(symbol)

    def symbols(self):
        """Every entity symbol that can appear in a state of this game."""
        out = [AVATAR] + [e.symbol for e in self.entities]
        out += [e.shot_symbol for e in self.entities if e.behavior == "shooter"]
        return out

    def avatar_start(self):
        for r, line in enumerate(self.layout):
            c = line.find(AVATAR_GLYPH)
            if c >= 0:
                return (r, c)
        raise InvalidSpec("no avatar in layout", "layout")


def _shot_def(symbol):
    return EntityDef(symbol, "shooter", 1.0,
                     Interaction(SHOT_INTERACTION_REWARD, True, False), glyph="*")


# ---------------------------------------------------------------------------
# parsing / serialization
# ---------------------------------------------------------------------------

_SECTIONS = ("meta", "entities", "rewards", "layout")
_META_KEYS = ("name", "game", "rows", "cols", "step_penalty", "max_steps", "goal")


def _parse_speed(text, lineno):
    try:
        if "/" in text:
            num, den = text.split("/", 1)
            return float(num) / float(den)
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise MalformedSpec(f"bad speed {text!r}", lineno) from None


def _parse_flag(text, key, lineno):
    if text in ("1", "true", "yes"):
        return True
    if text in ("0", "false", "no"):
        return False
    raise MalformedSpec(f"bad boolean for {key}: {text!r}", lineno)


def parse_game_spec(text):
    """Parse a game-description document into a validated :class:`GameSpec`."""
    section = None
    meta = {}
    entity_lines = []
    reward_lines = []
    layout = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if section != "layout":
            line = line.strip()
            if not line or line.startswith("#"):
                continue
        elif not line.strip():
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise MalformedSpec(f"unknown section [{section}]", lineno)
            continue
        if section is None:
            raise MalformedSpec("content before first section", lineno)
        if section == "layout":
            layout.append((lineno, line.strip()))
            continue
        if "=" not in line:
            raise MalformedSpec(f"expected 'key = value' in [{section}]", lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if section == "meta":
            if key not in _META_KEYS:
                raise MalformedSpec(f"unknown meta key {key!r}", lineno)
            meta[key] = (lineno, value)
        elif section == "entities":
            entity_lines.append((lineno, key, value))
        else:
            reward_lines.append((lineno, key, value))

    for key in ("name", "rows", "cols"):
        if key not in meta:
            raise InvalidSpec("missing required meta key", key)

    def meta_num(key, cast, default):
        if key not in meta:
            return default
        lineno, value = meta[key]
        try:
            return cast(value)
        except ValueError:
            raise MalformedSpec(f"bad value for {key}: {value!r}", lineno) from None

    rewards = {}
    for lineno, symbol, value in reward_lines:
        parts = value.split()
        if not parts:
            raise MalformedSpec("empty reward line", lineno)
        try:
            amount = float(parts[0])
        except ValueError:
            raise MalformedSpec(f"bad reward {parts[0]!r}", lineno) from None
        flags = set(parts[1:])
        unknown = flags - {"terminate", "consume"}
        if unknown:
            raise MalformedSpec(f"unknown reward flags {sorted(unknown)}", lineno)
        if symbol in rewards:
            raise InvalidSpec(f"duplicate reward entry for {symbol!r}", "rewards")
        rewards[symbol] = Interaction(amount, "terminate" in flags, "consume" in flags)

    entities = []
    for lineno, glyph, value in entity_lines:
        parts = value.split()
        if len(parts) < 2:
            raise MalformedSpec("entity needs 'symbol behavior'", lineno)
        symbol, behavior = parts[0], parts[1]
        attrs = {}
        for item in parts[2:]:
            if "=" not in item:
                raise MalformedSpec(f"bad entity attribute {item!r}", lineno)
            k, v = item.split("=", 1)
            attrs[k] = v
        unknown = set(attrs) - {"speed", "dir", "solid", "wrap"}
        if unknown:
            raise MalformedSpec(f"unknown entity attributes {sorted(unknown)}", lineno)
        entities.append(EntityDef(
            symbol=symbol,
            behavior=behavior,
            speed=_parse_speed(attrs["speed"], lineno) if "speed" in attrs else
            (0.0 if behavior in STILL else 1.0),
            interaction=rewards.get(symbol, Interaction()),
            glyph=glyph,
            direction=attrs.get("dir"),
            solid=_parse_flag(attrs.get("solid", "0"), "solid", lineno),
            wrap=_parse_flag(attrs.get("wrap", "0"), "wrap", lineno),
        ))
    known = {e.symbol for e in entities}
    for symbol in rewards:
        if symbol not in known:
            raise InvalidSpec(f"reward for undeclared entity {symbol!r}", "rewards")

    spec = GameSpec(
        name=meta["name"][1],
        game=meta["game"][1] if "game" in meta else meta["name"][1],
        rows=meta_num("rows", int, 16),
        cols=meta_num("cols", int, 16),
        entities=tuple(entities),
        layout=tuple(line for _, line in layout),
        step_penalty=meta_num("step_penalty", float, -0.01),
        max_steps=meta_num("max_steps", int, 100),
        goal_condition=meta["goal"][1] if "goal" in meta else "reach-cell",
    )
    validate_spec(spec)
    return spec


def validate_spec(spec):
    """Raise :class:`InvalidSpec` naming the first violated invariant."""
    if spec.rows < 1 or spec.cols < 1:
        raise InvalidSpec("grid must be at least 1x1", "rows/cols")
    if spec.max_steps < 1:
        raise InvalidSpec("must be >= 1", "max_steps")
    if spec.goal_condition not in GOALS:
        raise InvalidSpec(f"unknown goal {spec.goal_condition!r}", "goal")
    if not math.isfinite(spec.step_penalty):
        raise InvalidSpec("must be finite", "step_penalty")
    if len(spec.layout) != spec.rows:
        raise InvalidSpec(f"expected {spec.rows} rows, got {len(spec.layout)}", "layout")
    glyphs = {}
    symbols = set()
    for e in spec.entities:
        where = f"entities.{e.symbol}"
        if len(e.glyph) != 1 or e.glyph in (AVATAR_GLYPH, EMPTY_GLYPH) or e.glyph.isspace():
            raise InvalidSpec(f"bad glyph {e.glyph!r}", where)
        if e.glyph in glyphs:
            raise InvalidSpec(f"glyph {e.glyph!r} reused", where)
        if e.symbol in symbols or e.symbol == AVATAR or e.symbol.endswith(SHOT_SUFFIX):
            raise InvalidSpec("duplicate or reserved symbol", where)
        if e.behavior not in BEHAVIORS:
            raise InvalidSpec(f"unknown behavior {e.behavior!r}", where)
        if e.behavior in STILL:
            if e.speed != 0:
                raise InvalidSpec("still entities must have speed 0", where)
        elif not (0 < e.speed <= 1):
            raise InvalidSpec("mover speed must be in (0, 1]", where)
        if e.direction is not None and e.direction not in DIRECTIONS:
            raise InvalidSpec(f"bad direction {e.direction!r}", where)
        if e.solid and e.behavior not in STILL:
            raise InvalidSpec("only still entities may be solid", where)
        if not math.isfinite(e.interaction.reward):
            raise InvalidSpec("reward must be finite", where)
        glyphs[e.glyph] = e
        symbols.add(e.symbol)
    avatars = 0
    for r, line in enumerate(spec.layout):
        if len(line) != spec.cols:
            raise InvalidSpec(f"row {r} has {len(line)} cells, expected {spec.cols}", "layout")
        for ch in line:
            if ch == AVATAR_GLYPH:
                avatars += 1
            elif ch != EMPTY_GLYPH and ch not in glyphs:
                raise InvalidSpec(f"glyph {ch!r} not declared in [entities]", "layout")
    if avatars != 1:
        raise InvalidSpec(f"expected exactly one avatar, found {avatars}", "layout")
    if spec.goal_condition == "collect-and-exit" and not any(
            e.behavior == "door" for e in spec.entities):
        raise InvalidSpec("collect-and-exit needs a door entity", "goal")


def _fmt_float(x):
    return repr(float(x))


def serialize_game_spec(spec):
    """Canonical text form; ``parse(serialize(s)) == s`` for valid specs."""
    out = ["[meta]", f"name = {spec.name}", f"game = {spec.game or spec.name}",
           f"rows = {spec.rows}", f"cols = {spec.cols}",
           f"step_penalty = {_fmt_float(spec.step_penalty)}",
           f"max_steps = {spec.max_steps}", f"goal = {spec.goal_condition}",
           "", "[entities]"]
    for e in spec.entities:
        parts = [f"{e.glyph} = {e.symbol} {e.behavior}"]
        if e.behavior not in STILL:
            parts.append(f"speed={_fmt_float(e.speed)}")
        if e.direction:
            parts.append(f"dir={e.direction}")
        if e.solid:
            parts.append("solid=1")
        if e.wrap:
            parts.append("wrap=1")
        out.append(" ".join(parts))
    out += ["", "[rewards]"]
    for e in spec.entities:
        i = e.interaction
        if i == Interaction():
            continue
        flags = (" terminate" if i.terminate else "") + (" consume" if i.consume else "")
        out.append(f"{e.symbol} = {_fmt_float(i.reward)}{flags}")
    out += ["", "[layout]", *spec.layout, ""]
    return "\n".join(out)


def check_suite(specs):
    """Entity symbols may not be shared between different games of one suite."""
    owner = {}
    for spec in specs:
        game = spec.game or spec.name
        for e in spec.entities:
            prev = owner.setdefault(e.symbol, game)
            if prev != game:
                raise InvalidSpec(f"symbol {e.symbol!r} used by games {prev!r} and {game!r}",
                                  "entities")


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


class Entity(NamedTuple):
    uid: int
    symbol: str
    row: int
    col: int
    dr: int = 0
    dc: int = 0


@dataclass(frozen=True)
class State:
    spec: GameSpec = field(repr=False)
    entities: tuple[Entity, ...]
    avatar_pos: tuple[int, int]
    step: int = 0
    alive: bool = True
    next_uid: int = 0

    @property
    def grid(self):
        """``rows x cols`` nested lists of frozensets of entity symbols."""
        cells = [[set() for _ in range(self.spec.cols)] for _ in range(self.spec.rows)]
        for e in self.entities:
            cells[e.row][e.col].add(e.symbol)
        r, c = self.avatar_pos
        cells[r][c].add(AVATAR)
        return [[frozenset(s) for s in row] for row in cells]

    def occupants(self):
        """``(row, col, symbol)`` for every entity, avatar first."""
        r, c = self.avatar_pos
        return [(r, c, AVATAR)] + [(e.row, e.col, e.symbol) for e in self.entities]


@dataclass(frozen=True)
class Transition:
    s: object
    a: int
    r: float
    s_next: object
    terminal: bool
    env_id: int = 0


def reset(spec, seed=0):
    """Initial state from the layout; patrols without a ``dir`` get a seeded one."""
    rng = np.random.default_rng(seed)
    by_glyph = {e.glyph: e for e in spec.entities}
    entities = []
    avatar = None
    for r, line in enumerate(spec.layout):
        for c, ch in enumerate(line):
            if ch == EMPTY_GLYPH:
                continue
            if ch == AVATAR_GLYPH:
                avatar = (r, c)
                continue
            d = by_glyph[ch]
            dr, dc = _initial_heading(d, rng)
            entities.append(Entity(len(entities), d.symbol, r, c, dr, dc))
    if avatar is None:
        raise InvalidSpec("no avatar in layout", "layout")
    return State(spec, tuple(entities), avatar, 0, True, len(entities))


def _initial_heading(d, rng):
    if d.direction is not None:
        return DIRECTIONS[d.direction]
    if d.behavior == "horizontal-patrol":
        return ((0, 1), (0, -1))[int(rng.integers(2))]
    if d.behavior == "vertical-patrol":
        return ((1, 0), (-1, 0))[int(rng.integers(2))]
    if d.behavior == "shooter":
        return DIRECTIONS[("up", "down", "left", "right")[int(rng.integers(4))]]
    return (0, 0)


def _in_bounds(spec, r, c):
    return 0 <= r < spec.rows and 0 <= c < spec.cols


def _free(spec, solid, r, c):
    return _in_bounds(spec, r, c) and (r, c) not in solid


def _move_entity(spec, d, e, avatar, solid, rng):
    """One movement tick for a mover; returns the updated Entity."""
    b = d.behavior
    r, c = e.row, e.col
    if b in ("horizontal-patrol", "vertical-patrol"):
        nr, nc = r + e.dr, c + e.dc
        if d.wrap:
            nr, nc = nr % spec.rows, nc % spec.cols
        if _free(spec, solid, nr, nc):
            return e._replace(row=nr, col=nc)
        return e._replace(dr=-e.dr, dc=-e.dc)
    if b in ("random-walk", "friend", "enemy"):
        dr, dc = ACTION_DELTAS[int(rng.integers(4))]
        if _free(spec, solid, r + dr, c + dc):
            return e._replace(row=r + dr, col=c + dc)
        return e
    if b in ("chaser", "fleer"):
        dist = abs(r - avatar[0]) + abs(c - avatar[1])
        options = []
        for dr, dc in ACTION_DELTAS[:4]:
            nr, nc = r + dr, c + dc
            if not _free(spec, solid, nr, nc):
                continue
            nd = abs(nr - avatar[0]) + abs(nc - avatar[1])
            if (b == "chaser" and nd < dist) or (b == "fleer" and nd > dist):
                options.append((nr, nc))
        if not options:
            return e
        nr, nc = options[int(rng.integers(len(options)))] if len(options) > 1 else options[0]
        return e._replace(row=nr, col=nc)
    return e


def step(state, a, rng):
    """Advance one tick. Returns ``(next_state, reward, terminal)``."""
    if not state.alive:
        raise SteppedTerminalState("cannot step a terminal state")
    if not 0 <= a < N_ACTIONS:
        raise ValueError(f"action {a} outside [0, {N_ACTIONS})")
    spec = state.spec
    defs = {e.symbol: e for e in spec.entities}
    t = state.step
    reward = spec.step_penalty
    solid = {(e.row, e.col) for e in state.entities
             if e.symbol in defs and defs[e.symbol].solid}

    dr, dc = ACTION_DELTAS[a]
    ar, ac = state.avatar_pos
    if _free(spec, solid, ar + dr, ac + dc):
        ar, ac = ar + dr, ac + dc
    avatar = (ar, ac)

    entities = list(state.entities)
    next_uid = state.next_uid
    touched = set()
    done = False
    dead = False

    def door_open():
        return not any(defs[e.symbol].behavior == "resource"
                       for e in entities if e.symbol in defs)

    def resolve():
        nonlocal reward, done, dead, entities
        here = [e for e in entities if (e.row, e.col) == avatar and e.uid not in touched]
        if not here:
            return
        consumed = set()
        gained = 0.0
        ended = False
        for e in here:
            touched.add(e.uid)
            d = defs.get(e.symbol) or _shot_def(e.symbol)
            inter = d.interaction
            if d.behavior == "door" and spec.goal_condition == "collect-and-exit" \
                    and not door_open():
                continue
            if inter.consume:
                consumed.add(e.uid)
            gained += inter.reward
            if inter.terminate:
                ended = True
                if inter.reward <= 0:
                    dead = True
        entities = [e for e in entities if e.uid not in consumed]
        reward += gained
        done = done or ended

    resolve()
    if not done:
        moved = []
        spawned = []
        for e in entities:
            d = defs.get(e.symbol)
            if d is None:  # projectile
                nr, nc = e.row + e.dr, e.col + e.dc
                if _free(spec, solid, nr, nc):
                    moved.append(e._replace(row=nr, col=nc))
                continue
            if d.behavior in STILL or (t + 1) % d.period:
                moved.append(e)
                continue
            if d.behavior == "shooter":
                moved.append(e)
                nr, nc = e.row + e.dr, e.col + e.dc
                if _free(spec, solid, nr, nc):
                    spawned.append(Entity(next_uid, d.shot_symbol, nr, nc, e.dr, e.dc))
                    next_uid += 1
                continue
            moved.append(_move_entity(spec, d, e, avatar, solid, rng))
        entities = moved + spawned
        resolve()

    if not done and spec.goal_condition == "meet-all-friends":
        if not any(e.symbol in defs and defs[e.symbol].is_friend for e in entities):
            done = True
    step_count = t + 1
    if step_count >= spec.max_steps:
        done = True
    nxt = State(spec, tuple(entities), avatar, step_count, not done, next_uid)
    return nxt, float(reward), done


# ---------------------------------------------------------------------------
# Friends & Enemies instances
# ---------------------------------------------------------------------------

_FE_GLYPHS = "bcdefghijklmnopqrstuvwxyz"


def sample_fe_instance(pool, count=4, seed=0, rows=16, cols=16, name=None,
                       max_steps=100, step_penalty=-0.01, game="fe"):
    """Sample ``count`` pool entities and place them at distinct random cells.

    When the pool holds enough of both, half the sample is friends and half
    is enemies, which keeps the episode reward ceiling at ``count // 2``.
    """
    pool = list(pool)
    if len(pool) < count:
        raise PoolTooSmall(f"pool has {len(pool)} entities, need {count}")
    if count + 1 > rows * cols:
        raise PoolTooSmall("grid too small for the requested entities")
    rng = np.random.default_rng(seed)
    friends = [i for i, e in enumerate(pool) if e.is_friend]
    others = [i for i, e in enumerate(pool) if not e.is_friend]
    n_friend = count // 2
    if len(friends) >= n_friend and len(others) >= count - n_friend:
        picks = list(rng.choice(friends, n_friend, replace=False)) + \
            list(rng.choice(others, count - n_friend, replace=False))
    else:
        picks = list(rng.choice(len(pool), count, replace=False))
    cells = rng.choice(rows * cols, count + 1, replace=False)
    grid = [[EMPTY_GLYPH] * cols for _ in range(rows)]
    ar, ac = divmod(int(cells[0]), cols)
    grid[ar][ac] = AVATAR_GLYPH
    chosen = []
    for j, (idx, cell) in enumerate(zip(picks, cells[1:])):
        d = dataclasses.replace(pool[int(idx)], glyph=_FE_GLYPHS[j])
        r, c = divmod(int(cell), cols)
        grid[r][c] = d.glyph
        chosen.append(d)
    spec = GameSpec(
        name=name or f"{game}_s{seed}",
        game=game,
        rows=rows,
        cols=cols,
        entities=tuple(chosen),
        layout=tuple("".join(row) for row in grid),
        step_penalty=step_penalty,
        max_steps=max_steps,
        goal_condition="meet-all-friends",
    )
    validate_spec(spec)
    return spec


def speed_up(spec, factor=2.0, name=None):
    """Copy of ``spec`` with every mover's speed multiplied (capped at 1)."""
    ents = tuple(
        e if e.behavior in STILL else dataclasses.replace(e, speed=min(1.0, e.speed * factor))
        for e in spec.entities
    )
    return dataclasses.replace(spec, entities=ents, name=name or spec.name)


def max_episode_reward(spec):
    """Reward ceiling ignoring step penalties: every positive interaction once."""
    total = 0.0
    counts = {}
    for line in spec.layout:
        for ch in line:
            counts[ch] = counts.get(ch, 0) + 1
    for e in spec.entities:
        i = e.interaction
        if i.reward <= 0:
            continue
        n = counts.get(e.glyph, 0)
        if i.terminate:
            continue
        total += i.reward * (n if i.consume else 0)
    best_end = max((e.interaction.reward for e in spec.entities
                    if e.interaction.terminate and e.interaction.reward > 0
                    and counts.get(e.glyph, 0)), default=0.0)
    return total + best_end


class GameEnv:
    """Stateful wrapper owning one game's current state and step rng."""

    def __init__(self, spec, seed=0):
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.state = None
        self.episodes = 0

    def reset(self):
        self.state = reset(self.spec, self.seed + self.episodes)
        self.episodes += 1
        return self.state

    def step(self, a):
        self.state, r, done = step(self.state, a, self.rng)
        return self.state, r, done
