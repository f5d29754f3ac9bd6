"""Transfer metrics over reward logs, plus reward-curve and value-map export.

* average reward: trapezoidal area under reward-vs-episode-index, divided by
  the number of test episodes;
* jumpstart: mean episode reward over episodes ending within a step horizon;
* asymptotic: mean episode reward over a step window starting where a
  trailing-window least-squares slope first falls below a tolerance.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .corpus import Description, build_vocab
from .engine import EntityDef, GameSpec, Interaction, reset
from .qnet import q_values

FULL_HORIZON_STEPS = 100_000
DESK_HORIZON_STEPS = 10_000
CONVERGENCE_WINDOW = 200
CONVERGENCE_SLOPE_TOL = 1e-3
CURVE_HEADER = ("step", "episode", "env_id", "reward")


class EmptyLog(ValueError):
    pass


class NoEpisodesInHorizon(ValueError):
    pass


class NotConverged(ValueError):
    pass


class IoFailure(OSError):
    pass


class Record(NamedTuple):
    global_step: int
    episode_index: int
    env_id: str
    episode_reward: float


@dataclass(frozen=True)
class RewardLog:
    records: tuple[Record, ...]

    def __post_init__(self):
        steps = [r.global_step for r in self.records]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("global_step must be strictly increasing")

    @classmethod
    def from_records(cls, rows):
        """Build from ``(step, episode, env_id, reward)`` tuples in any order."""
        recs = sorted(Record(int(s), int(e), str(k), float(r)) for s, e, k, r in rows)
        return cls(tuple(recs))

    def __len__(self):
        return len(self.records)

    @property
    def rewards(self):
        return np.array([r.episode_reward for r in self.records], dtype=np.float64)

    @property
    def steps(self):
        return np.array([r.global_step for r in self.records], dtype=np.int64)

    def for_env(self, env_id):
        return RewardLog(tuple(r for r in self.records if r.env_id == env_id))

    def env_ids(self):
        return sorted({r.env_id for r in self.records})


def average_reward(log, num_test_episodes=None):
    """Trapezoidal area under (episode index, reward) over the episode count."""
    if not len(log):
        raise EmptyLog("no episodes in log")
    n = num_test_episodes or len(log)
    x = np.array([r.episode_index for r in log.records], dtype=np.float64)
    y = log.rewards
    if len(y) < 2:
        return 0.0
    area = float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))
    return area / n


def jumpstart(log, horizon_steps=FULL_HORIZON_STEPS):
    """Mean reward over episodes whose final step is within ``horizon_steps``."""
    within = log.rewards[log.steps <= horizon_steps]
    if within.size == 0:
        raise NoEpisodesInHorizon(f"no episode ends within {horizon_steps} steps")
    return float(within.mean())


def detect_convergence(log, window=CONVERGENCE_WINDOW, slope_tol=CONVERGENCE_SLOPE_TOL):
    """Step of the first episode closing a trailing window with ``|slope| <= tol``."""
    y = log.rewards
    n = len(y)
    if window < 2 or n < window:
        return None
    idx = np.arange(n, dtype=np.float64)
    cy = np.concatenate([[0.0], np.cumsum(y)])
    cxy = np.concatenate([[0.0], np.cumsum(idx * y)])
    x = np.arange(window, dtype=np.float64)
    sxx = float(np.sum((x - x.mean()) ** 2))
    ends = np.arange(window - 1, n)
    starts = ends - window + 1
    sum_y = cy[ends + 1] - cy[starts]
    sum_xy = cxy[ends + 1] - cxy[starts] - starts * sum_y
    slope = (sum_xy - x.mean() * sum_y) / sxx
    hit = np.flatnonzero(np.abs(slope) <= slope_tol)
    if hit.size == 0:
        return None
    return int(log.steps[ends[hit[0]]])


def asymptotic(log, window_steps=FULL_HORIZON_STEPS, conv_window=CONVERGENCE_WINDOW,
               slope_tol=CONVERGENCE_SLOPE_TOL):
    """Mean reward over ``window_steps`` starting at the detected convergence step."""
    start = detect_convergence(log, conv_window, slope_tol)
    if start is None:
        raise NotConverged("reward curve never flattened")
    steps = log.steps
    sel = (steps >= start) & (steps <= start + window_steps)
    return float(log.rewards[sel].mean())


@dataclass
class MetricsReport:
    average_reward: float
    jumpstart: float
    asymptotic: float
    converged: bool = True
    per_env: dict = field(default_factory=dict)
    seeds: tuple = ()

    def to_text(self):
        lines = [f"average_reward = {self.average_reward!r}",
                 f"jumpstart = {self.jumpstart!r}",
                 f"asymptotic = {self.asymptotic!r}",
                 f"converged = {int(self.converged)}",
                 f"seeds = {','.join(map(str, self.seeds))}"]
        for env, vals in sorted(self.per_env.items()):
            for key, value in sorted(vals.items()):
                lines.append(f"{env}.{key} = {value!r}")
        return "\n".join(lines) + "\n"

    def csv_row(self):
        return ",".join([repr(self.average_reward), repr(self.jumpstart),
                         repr(self.asymptotic), str(int(self.converged)),
                         " ".join(map(str, self.seeds))])

    CSV_HEADER = "average_reward,jumpstart,asymptotic,converged,seeds"


def _metrics(log, horizon, window, conv_window, slope_tol):
    js = jumpstart(log, horizon) if len(log) and log.steps[0] <= horizon else float("nan")
    try:
        asym, conv = asymptotic(log, window, conv_window, slope_tol), True
    except NotConverged:
        # fall back to the final window so the report stays finite
        last = log.steps[-1]
        asym, conv = float(log.rewards[log.steps >= last - window].mean()), False
    return average_reward(log), js, asym, conv


def compute_report(logs, horizon=FULL_HORIZON_STEPS, window=FULL_HORIZON_STEPS,
                   conv_window=CONVERGENCE_WINDOW, slope_tol=CONVERGENCE_SLOPE_TOL, seeds=()):
    """Seed-averaged metrics; ``logs`` is one RewardLog per seed."""
    if not logs:
        raise EmptyLog("no logs")
    vals = [_metrics(lg, horizon, window, conv_window, slope_tol) for lg in logs]
    per_env = {}
    for env in sorted({e for lg in logs for e in lg.env_ids()}):
        sub = [lg.for_env(env) for lg in logs]
        sub = [s for s in sub if len(s)]
        ev = [_metrics(s, horizon, window, conv_window, slope_tol) for s in sub]
        per_env[env] = {"average_reward": float(np.mean([v[0] for v in ev])),
                        "asymptotic": float(np.mean([v[2] for v in ev]))}
    return MetricsReport(
        average_reward=float(np.mean([v[0] for v in vals])),
        jumpstart=float(np.nanmean([v[1] for v in vals])),
        asymptotic=float(np.mean([v[2] for v in vals])),
        converged=all(v[3] for v in vals),
        per_env=per_env,
        seeds=tuple(seeds),
    )


# ---------------------------------------------------------------------------
# reward curves
# ---------------------------------------------------------------------------


def write_reward_curve(log, path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for r in log.records:
        w.writerow([r.global_step, r.episode_index, r.env_id, repr(r.episode_reward)])
    try:
        Path(path).write_text(buf.getvalue())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_reward_curve(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return RewardLog.from_records(
        (r["step"], r["episode"], r["env_id"], r["reward"]) for r in rows)


def bootstrap_band(curves, n_boot=1000, ci=0.95, seed=0):
    """Mean curve and bootstrap percentile band across seeds.

    ``curves`` is ``(n_seeds, n_points)``; returns ``(mean, lo, hi)``.
    """
    curves = np.asarray(curves, dtype=np.float64)
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, curves.shape[0], size=(n_boot, curves.shape[0]))
    means = curves[picks].mean(axis=1)
    alpha = (1.0 - ci) / 2.0
    return curves.mean(axis=0), np.quantile(means, alpha, axis=0), \
        np.quantile(means, 1 - alpha, axis=0)


# ---------------------------------------------------------------------------
# value maps
# ---------------------------------------------------------------------------


def export_value_map(model, state, corpus, path, episode_seed=0, image=False):
    """Write the planner's value map as an ``m x n`` CSV grid (optionally a PNG)."""
    out = q_values(model, state, corpus, episode_seed)
    v = out.v_map
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in v:
                w.writerow([repr(float(x)) for x in row])
        if image:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt

            fig, ax = plt.subplots(figsize=(4, 4))
            im = ax.imshow(v, cmap="viridis")
            ar, ac = state.avatar_pos
            ax.plot(ac, ar, "w^")
            fig.colorbar(im, ax=ax)
            fig.savefig(Path(path).with_suffix(".png"), dpi=100)
            plt.close(fig)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return v


def probe_state(rows, cols, avatar, entity_pos, symbol, behavior="random-walk"):
    """A state holding only the avatar and one entity."""
    layout = [["."] * cols for _ in range(rows)]
    layout[avatar[0]][avatar[1]] = "A"
    layout[entity_pos[0]][entity_pos[1]] = "p"
    spec = GameSpec(name="probe", game="probe", rows=rows, cols=cols,
                    entities=(EntityDef(symbol, behavior, 1.0 if behavior != "static" else 0.0,
                                        Interaction(), glyph="p"),),
                    layout=tuple("".join(r) for r in layout))
    return reset(spec, 0)


def neighborhood_mean(v_map, pos, radius=1):
    r, c = pos
    patch = v_map[max(0, r - radius):r + radius + 1, max(0, c - radius):c + radius + 1]
    return float(patch.mean())


def value_map_probe(model, rows, cols, avatar, entity_pos, cases):
    """Value maps for several ``(symbol, tokens-or-None)`` probe cases.

    Returns ``{case_name: (v_map, neighborhood_mean)}``. Probe symbols not yet
    embedded receive fresh vectors, exactly like a new entity in a new game.
    """
    out = {}
    for name, (symbol, tokens) in cases.items():
        state = probe_state(rows, cols, avatar, entity_pos, symbol)
        corp = build_vocab([Description(symbol, tuple(tokens), 1)]) if tokens else None
        v = q_values(model, state, corp, 0, annotators=(1,)).v_map
        out[name] = (v, neighborhood_mean(v, entity_pos))
    return out
