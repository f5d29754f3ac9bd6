"""Command-line entry point: ``textvin <subcommand> [--config FILE] [flags]``.

Config files are flat ``key = value`` documents. An ``include = other.cfg``
line pulls in shared defaults (resolved relative to the including file);
keys in the including file win, and command-line flags win over both.
Every run writes ``config_<mode>.snapshot`` under its output directory holding
the fully resolved configuration, which can be fed back through ``--config``.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import evaluate, learner, suite
from .corpus import generate_synthetic_corpus, read_corpus, write_corpus
from .engine import SpecError, parse_game_spec, reset
from .qnet import SUPPORTED_K, ModelConfig

log = logging.getLogger("textvin")

MODES = ("train", "multitask", "transfer", "eval", "inspect", "synth-corpus")
DESK_SCALE = 10
SNAPSHOT = "config_{mode}.snapshot"


class ConfigError(ValueError):
    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


# ---------------------------------------------------------------------------
# config documents
# ---------------------------------------------------------------------------


def parse_config_text(text, base_dir=None, _seen=None):
    """Flat key/value document to an ordered dict, resolving ``include``."""
    _seen = set() if _seen is None else _seen
    out = {}
    own = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", "config")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if not key:
            raise ConfigError(f"line {lineno}: empty key", "config")
        if key == "include":
            path = Path(base_dir or ".") / value
            out.update(load_config_file(path, _seen))
        else:
            own[key] = value
    out.update(own)
    return out


def load_config_file(path, _seen=None):
    path = Path(path).resolve()
    _seen = set() if _seen is None else _seen
    if path in _seen:
        raise ConfigError(f"include cycle through {path}", "include")
    if not path.is_file():
        raise ConfigError(f"no such file {path}", "config")
    _seen.add(path)
    return parse_config_text(path.read_text(), path.parent, _seen)


def _parse_bool(value, name):
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}", name)


def _parse_list(value):
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return tuple(s.strip() for s in str(value).split(",") if s.strip())


_TRAIN_TYPES = {
    "gamma": float, "lr_start": float, "lr_end": float, "lr_anneal_steps": int,
    "minibatch": int, "eps_start": float, "eps_end": float, "eps_anneal_steps": int,
    "eps_fixed": float, "target_refresh_period": int, "episodes": int, "max_steps": int,
    "total_steps": int, "replay_capacity": int, "warmup": int, "grad_clip": float,
    "beta1": float, "beta2": float, "adam_eps": float,
}


@dataclass
class ExperimentConfig:
    mode: str = "multitask"
    games: tuple = ()
    source_games: tuple = ()
    target_games: tuple = ()
    scenario: str = ""
    corpus: str = ""
    synth_seed: int = 0
    seeds: tuple = (0,)
    out: str = ""
    k: int = 3
    d: int = 30
    representation: str = "full"
    use_vin: bool = True
    use_reactive: bool = True
    desk_scale: bool = False
    steps: int = 0
    source_steps: int = 0
    target_steps: int = 0
    baseline: bool = False
    eval_every: int = 0
    eval_episodes: int = 1
    test_episodes: str = "greedy"
    annotators: tuple = (1, 2, 3)
    checkpoint: str = ""
    image: bool = False
    horizon: int = evaluate.FULL_HORIZON_STEPS
    window: int = evaluate.FULL_HORIZON_STEPS
    train: dict = field(default_factory=dict)

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}", "mode")
        if not self.seeds:
            raise ConfigError("at least one seed is required", "seeds")
        if self.k not in SUPPORTED_K:
            raise ConfigError(f"k must be one of {SUPPORTED_K}", "k")
        if self.representation not in ("full", "text", "id"):
            raise ConfigError(f"unknown representation {self.representation!r}",
                              "representation")
        if self.test_episodes not in ("greedy", "training"):
            raise ConfigError("expected 'greedy' or 'training'", "test_episodes")
        if not self.out:
            raise ConfigError("no output directory (use --out or TEXTVIN_OUT)", "out")
        if self.mode in ("train", "multitask", "synth-corpus") and not self.games:
            raise ConfigError("no games listed", "games")
        if self.mode == "train" and len(self.games) != 1:
            raise ConfigError("train takes exactly one game", "games")
        if self.mode == "transfer" and not self.scenario and not (
                self.source_games and self.target_games):
            raise ConfigError("transfer needs a scenario or source_games + target_games",
                              "scenario")
        if self.mode == "inspect" and not (self.checkpoint and self.games):
            raise ConfigError("inspect needs a checkpoint and a game", "checkpoint")
        if self.corpus and not Path(self.corpus).is_file():
            raise ConfigError(f"no such corpus {self.corpus}", "corpus")
        if self.checkpoint and not Path(self.checkpoint).is_file():
            raise ConfigError(f"no such checkpoint {self.checkpoint}", "checkpoint")
        try:
            self.train_config(self.seeds[0])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), "train") from exc
        return self

    def train_config(self, seed, **over):
        kw = dict(self.train)
        if self.desk_scale:
            kw.setdefault("lr_anneal_steps", 100_000 // DESK_SCALE)
            kw.setdefault("eps_anneal_steps", 100_000 // DESK_SCALE)
        if self.steps:
            kw["total_steps"] = self.steps
            kw.setdefault("episodes", 10 ** 9)
        kw.update(over)
        return learner.TrainConfig(seed=seed, annotators=self.annotators, **kw)

    def model_config(self, rows, cols, seed):
        return ModelConfig(rows=rows, cols=cols, d=self.d, k=self.k,
                           representation=self.representation, use_vin=self.use_vin,
                           use_reactive=self.use_reactive, seed=seed)

    @property
    def metric_horizon(self):
        return self.horizon // DESK_SCALE if self.desk_scale else self.horizon

    @property
    def metric_window(self):
        return self.window // DESK_SCALE if self.desk_scale else self.window

    def snapshot(self):
        lines = []
        for f in dataclasses.fields(self):
            if f.name == "train":
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(map(str, value))
            elif isinstance(value, bool):
                value = int(value)
            lines.append(f"{f.name} = {value}")
        for key, value in sorted(self.train.items()):
            lines.append(f"{key} = {'none' if value is None else value}")
        return "\n".join(lines) + "\n"


def build_config(values):
    """``ExperimentConfig`` from a flat string dict (file values plus flags)."""
    cfg = ExperimentConfig()
    own = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"train"}
    for key, value in values.items():
        if value is None:
            continue
        if key in _TRAIN_TYPES:
            if str(value).strip().lower() == "none":
                cfg.train[key] = None
                continue
            try:
                cfg.train[key] = _TRAIN_TYPES[key](float(value)) \
                    if _TRAIN_TYPES[key] is int else float(value)
            except ValueError as exc:
                raise ConfigError(f"bad number {value!r}", key) from exc
            continue
        if key not in own:
            raise ConfigError("unknown key", key)
        default = getattr(cfg, key)
        try:
            if isinstance(default, bool):
                value = _parse_bool(value, key)
            elif isinstance(default, int):
                value = int(value)
            elif key in ("seeds", "annotators"):
                value = tuple(int(s) for s in _parse_list(value))
            elif isinstance(default, tuple):
                value = _parse_list(value)
            else:
                value = str(value)
        except ValueError as exc:
            raise ConfigError(f"bad value {value!r}", key) from exc
        setattr(cfg, key, value)
    if not cfg.out:
        cfg.out = os.environ.get("TEXTVIN_OUT", "")
    return cfg.validate()


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def resolve_games(entries, seed=0):
    """Bundled names, ``.game`` paths, or ``fe1:N`` / ``fe2:N`` samplers."""
    specs = []
    for entry in entries:
        if entry.startswith(("fe1:", "fe2:")):
            fam, n = entry.split(":", 1)
            specs += suite.fe_instances(int(n), seed, faster=fam == "fe2", prefix=fam)
            continue
        path = Path(entry)
        try:
            if path.suffix == ".game" or path.is_file():
                specs.append(parse_game_spec(path.read_text()))
            else:
                specs.append(suite.load_bundled(entry))
        except suite.UnknownGame as exc:
            raise ConfigError(f"unknown game {entry!r}", "games") from exc
        except OSError as exc:
            raise ConfigError(str(exc), "games") from exc
    shapes = {(s.rows, s.cols) for s in specs}
    if len(shapes) > 1:
        raise ConfigError(f"games differ in grid size: {sorted(shapes)}", "games")
    return specs


def load_or_synth_corpus(cfg, specs):
    if cfg.corpus:
        return read_corpus(cfg.corpus)
    return generate_synthetic_corpus(specs, seed=cfg.synth_seed)


def _seed_dir(cfg, seed):
    path = Path(cfg.out) / f"seed_{seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _train(cfg, envs, seed, tcfg, model=None, tag="train"):
    rows, cols = envs[0][0].rows, envs[0][0].cols
    evals = []
    eval_step = {"n": 0}

    def callback(rec):
        if cfg.eval_every and (rec["episode"] + 1) % cfg.eval_every == 0:
            scores = learner.evaluate_policy(model_ref[0], envs, cfg.eval_episodes,
                                             seed=seed * 1_000 + eval_step["n"],
                                             annotators=cfg.annotators)
            eval_step["n"] += 1
            evals.append((rec["global_step"], rec["episode"], "eval",
                          sum(scores.values()) / len(scores)))

    model_ref = [model or learner.QNetwork.create(cfg.model_config(rows, cols, seed))]
    model, tlog = learner.multitask_train(envs, tcfg, model=model_ref[0], callback=callback,
                                          dump_path=_seed_dir(cfg, seed) / f"{tag}.dump")
    out = _seed_dir(cfg, seed)
    (out / f"{tag}_log.csv").write_text(tlog.to_csv())
    evaluate.write_reward_curve(tlog.reward_log(), out / f"{tag}_curve.csv")
    if evals:
        evaluate.write_reward_curve(evaluate.RewardLog.from_records(evals),
                                    out / f"{tag}_eval_curve.csv")
    learner.save_checkpoint(model, out / f"{tag}.ckpt", {"seed": seed, "tag": tag})
    return model, tlog


def _curve_for_metrics(cfg, seed_dir, tag):
    greedy = seed_dir / f"{tag}_eval_curve.csv"
    if cfg.test_episodes == "greedy" and greedy.is_file():
        return greedy
    return seed_dir / f"{tag}_curve.csv"


def _write_report(cfg, logs, name, seeds=None):
    report = evaluate.compute_report(logs, horizon=cfg.metric_horizon,
                                     window=cfg.metric_window,
                                     seeds=cfg.seeds if seeds is None else seeds)
    out = Path(cfg.out)
    (out / f"{name}.txt").write_text(report.to_text())
    (out / f"{name}.csv").write_text(evaluate.MetricsReport.CSV_HEADER + "\n"
                                     + report.csv_row() + "\n")
    return report


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_multitask(cfg):
    for seed in cfg.seeds:
        specs = resolve_games(cfg.games, seed)
        corp = load_or_synth_corpus(cfg, specs)
        _train(cfg, [(s, corp) for s in specs], seed, cfg.train_config(seed))
    return 0


def cmd_transfer(cfg):
    for seed in cfg.seeds:
        if cfg.scenario:
            try:
                source, target = suite.scenario(cfg.scenario, seed)
            except suite.UnknownGame as exc:
                raise ConfigError(f"unknown scenario {cfg.scenario!r}", "scenario") from exc
        else:
            source = resolve_games(cfg.source_games, seed)
            target = resolve_games(cfg.target_games, seed + 500)
        if (source[0].rows, source[0].cols) != (target[0].rows, target[0].cols):
            raise ConfigError("source and target grids differ in size", "target_games")
        corp = load_or_synth_corpus(cfg, source + target)
        src_cfg = cfg.train_config(seed, **({"total_steps": cfg.source_steps,
                                             "episodes": 10 ** 9} if cfg.source_steps else {}))
        tgt_over = {"total_steps": cfg.target_steps, "episodes": 10 ** 9} \
            if cfg.target_steps else {}
        tgt_cfg = learner.transfer_config(cfg.train_config(seed, **tgt_over))
        src_model, _ = _train(cfg, [(s, corp) for s in source], seed, src_cfg, tag="source")
        init = learner.transfer_init(src_model, target, corp, seed)
        _train(cfg, [(s, corp) for s in target], seed, tgt_cfg, model=init, tag="target")
        if cfg.baseline:
            _train(cfg, [(s, corp) for s in target], seed, tgt_cfg, tag="baseline")
    logs = [evaluate.read_reward_curve(_curve_for_metrics(cfg, Path(cfg.out) / f"seed_{s}",
                                                          "target")) for s in cfg.seeds]
    _write_report(cfg, logs, "target_metrics")
    return 0


def cmd_eval(cfg):
    out = Path(cfg.out)
    if not out.is_dir():
        raise ConfigError(f"{out} does not exist", "out")
    curves = sorted(p for p in out.glob("seed_*/*_curve.csv")
                    if p.parent.name[len("seed_"):].isdigit())
    if not curves:
        raise ConfigError(f"no reward curves under {out}", "out")
    by_tag = {}
    for path in curves:
        tag = path.name[:-len("_curve.csv")]
        if tag.endswith("_eval"):
            continue
        by_tag.setdefault(tag, []).append(path.parent)
    for tag, dirs in sorted(by_tag.items()):
        logs = [evaluate.read_reward_curve(_curve_for_metrics(cfg, d, tag)) for d in dirs]
        seeds = sorted(int(d.name[len("seed_"):]) for d in dirs)
        _write_report(cfg, logs, f"{tag}_metrics", seeds)
    return 0


def cmd_inspect(cfg):
    model = learner.load_checkpoint(cfg.checkpoint)
    specs = resolve_games(cfg.games, cfg.seeds[0])
    corp = load_or_synth_corpus(cfg, specs)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for spec in specs:
        state = reset(spec, cfg.seeds[0])
        evaluate.export_value_map(model, state, corp, out / f"value_map_{spec.name}.csv",
                                  episode_seed=cfg.seeds[0], image=cfg.image)
    return 0


def cmd_synth_corpus(cfg):
    specs = resolve_games(cfg.games, cfg.seeds[0])
    corp = generate_synthetic_corpus(specs, seed=cfg.synth_seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(corp, out / "corpus.tsv")
    stats = corp.stats()
    (out / "corpus_stats.txt").write_text(
        "".join(f"{k} = {v!r}\n" for k, v in sorted(stats.items())))
    return 0


COMMANDS = {
    "train": cmd_multitask,
    "multitask": cmd_multitask,
    "transfer": cmd_transfer,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
    "synth-corpus": cmd_synth_corpus,
}


def run(cfg):
    """Execute one experiment; returns the process exit status."""
    out = Path(cfg.out)
    if cfg.mode == "eval" and not out.is_dir():
        raise ConfigError(f"{out} does not exist", "out")
    out.mkdir(parents=True, exist_ok=True)
    (out / SNAPSHOT.format(mode=cfg.mode)).write_text(cfg.snapshot())
    return COMMANDS[cfg.mode](cfg)


def build_parser():
    p = argparse.ArgumentParser(prog="textvin", description=__doc__.splitlines()[0])
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", help="key = value experiment file")
    p.add_argument("--seed", type=int, action="append", dest="seeds",
                   help="seed (repeatable); overrides 'seeds'")
    p.add_argument("--out", help="output directory (default $TEXTVIN_OUT)")
    p.add_argument("--k", type=int, help="planner depth")
    p.add_argument("--steps", type=int, help="environment steps per training run")
    p.add_argument("--desk-scale", action="store_true", default=None,
                   help="shrink annealing and metric horizons tenfold")
    p.add_argument("--game", action="append", dest="games",
                   help="bundled game name, .game path, or fe1:N (repeatable)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = load_config_file(args.config) if args.config else {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"expected KEY=VALUE, got {item!r}", "set")
            key, value = item.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
        values["mode"] = args.mode
        flags = {"out": args.out, "k": args.k, "steps": args.steps,
                 "desk_scale": args.desk_scale,
                 "seeds": ",".join(map(str, args.seeds)) if args.seeds else None,
                 "games": ",".join(args.games) if args.games else None}
        values.update({k: v for k, v in flags.items() if v is not None})
        cfg = build_config(values)
        return run(cfg)
    except ConfigError as exc:
        print(f"textvin: config error: {exc}", file=sys.stderr)
        return 2
    except (SpecError, OSError, ValueError, FloatingPointError) as exc:
        print(f"textvin: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
