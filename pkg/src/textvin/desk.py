"""Desk-scale experiment presets: small grids and short runs that finish on one CPU.

* :func:`nav_run`: single-goal 8x8 navigation learned from scratch;
* :func:`fe_transfer_setup` / :func:`transfer_run` / :func:`baseline_run`:
  train on F&E instances built from one half of the entity pool, then move
  to instances whose entities all come from the other half;
* :func:`polarity_probe`: planner value around an unseen entity described
  with friend-style versus enemy-style text.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import evaluate, learner, suite
from .corpus import describe_entity, generate_synthetic_corpus
from .engine import EntityDef, Interaction
from .qnet import ModelConfig, QNetwork

DESK_HORIZON = evaluate.DESK_HORIZON_STEPS
GRID = 8
EPISODE_STEPS = 50
# bookkeeping defaults for short runs: faster target refresh and exploration decay
NAV_TRAIN = dict(lr_anneal_steps=20_000, eps_anneal_steps=5_000, target_refresh_period=500)
FE_SOURCE_STEPS = 20_000
FE_TARGET_STEPS = 10_000


def nav_run(seed, steps=20_000, d=30, k=3, **over):
    """Train on :func:`suite.nav_game`; returns ``(TrainingLog, optimal_return)``."""
    spec = suite.nav_game()
    corp = generate_synthetic_corpus([spec])
    kw = dict(NAV_TRAIN, episodes=10 ** 9, total_steps=steps)
    kw.update(over)
    cfg = learner.TrainConfig(seed=seed, **kw)
    mc = ModelConfig(rows=spec.rows, cols=spec.cols, d=d, k=k, seed=seed)
    _, tlog = learner.multitask_train([(spec, corp)], cfg, model_config=mc)
    optimum = 1.0 + spec.step_penalty * suite.shortest_path(spec)
    return tlog, optimum


def fe_transfer_setup(seed, n_source=3, n_target=2, rows=GRID, cols=GRID):
    """Source instances from pool half A, targets from half B (all entities unseen)."""
    half_a, half_b = suite.split_fe_pool()
    source = suite.fe_instances(n_source, seed, pool=half_a, rows=rows, cols=cols,
                                max_steps=EPISODE_STEPS, prefix="src")
    target = suite.fe_instances(n_target, seed + 500, pool=half_b, rows=rows, cols=cols,
                                max_steps=EPISODE_STEPS, prefix="tgt")
    return source, target, generate_synthetic_corpus(source + target)


def _source_config(seed, steps):
    return learner.TrainConfig(seed=seed, total_steps=steps, episodes=10 ** 9,
                               lr_anneal_steps=steps, eps_anneal_steps=steps // 2,
                               target_refresh_period=500)


def _target_config(seed, steps):
    return learner.transfer_config(learner.TrainConfig(
        seed=seed, total_steps=steps, episodes=10 ** 9, lr_anneal_steps=steps,
        target_refresh_period=500))


@dataclass
class TransferResult:
    representation: str
    source_model: QNetwork
    source_log: learner.TrainingLog
    target_log: learner.TrainingLog
    seconds: float
    extra: dict = field(default_factory=dict)

    @property
    def jumpstart(self):
        return evaluate.jumpstart(self.target_log.reward_log(), DESK_HORIZON)

    @property
    def average_reward(self):
        return evaluate.average_reward(self.target_log.reward_log())


def transfer_run(seed, representation="full", source_steps=FE_SOURCE_STEPS,
                 target_steps=FE_TARGET_STEPS, d=30, k=3, setup=None):
    """Source multitask training, ``transfer_init``, then target fine-tuning."""
    t0 = time.perf_counter()
    source, target, corp = setup or fe_transfer_setup(seed)
    mc = ModelConfig(rows=source[0].rows, cols=source[0].cols, d=d, k=k,
                     representation=representation, seed=seed)
    model, src_log = learner.multitask_train([(s, corp) for s in source],
                                             _source_config(seed, source_steps),
                                             model_config=mc)
    init = learner.transfer_init(model, target, corp, seed)
    _, tgt_log = learner.multitask_train([(s, corp) for s in target],
                                         _target_config(seed, target_steps), model=init)
    return TransferResult(representation, model, src_log, tgt_log,
                          time.perf_counter() - t0)


def baseline_run(seed, target_steps=FE_TARGET_STEPS, d=30, setup=None):
    """No-transfer baseline: a plain DQN (entity ids, no planner) trained on the targets."""
    t0 = time.perf_counter()
    _, target, corp = setup or fe_transfer_setup(seed)
    mc = ModelConfig(rows=target[0].rows, cols=target[0].cols, d=d,
                     representation="id", use_vin=False, seed=seed)
    model = QNetwork.create(mc)
    _, tgt_log = learner.multitask_train([(s, corp) for s in target],
                                         _target_config(seed, target_steps), model=model)
    return TransferResult("baseline", model, learner.TrainingLog(), tgt_log,
                          time.perf_counter() - t0)


PROBE_SYMBOL = "gremlin"


def polarity_probe(model, behavior="random-walk", symbol=PROBE_SYMBOL, avatar=(0, 0),
                   entity=(4, 4), annotators=(1, 2, 3, 4)):
    """Mean 3x3 planner value around an unseen entity under friend vs enemy text.

    Both descriptions come from the synthetic templates for an entity with the
    given behaviour; only the contact effect differs. Returns
    ``{"friend": value, "enemy": value}`` averaged over annotators.
    """
    model = model.copy()  # the probe symbol gets a fresh embedding row
    speed = 0.0 if behavior in ("static", "resource", "door") else 0.5
    kinds = {"friend": Interaction(1.0, False, True), "enemy": Interaction(-1.0, True, False)}
    rows, cols = model.config.rows, model.config.cols
    out = {}
    for name, inter in kinds.items():
        d = EntityDef(symbol, behavior, speed, inter)
        cases = {a: (symbol, describe_entity(d, a)) for a in annotators}
        probe = evaluate.value_map_probe(model, rows, cols, avatar, entity, cases)
        out[name] = float(np.mean([v for _, v in probe.values()]))
    return out
