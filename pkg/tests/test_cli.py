import pytest

from textvin import suite
from textvin.cli import (ConfigError, build_config, load_config_file, main,
                         parse_config_text, resolve_games)
from textvin.engine import serialize_game_spec

FAST = ["--set", "warmup=20", "--set", "minibatch=4", "--set", "d=6", "--set", "k=1",
        "--set", "target_refresh_period=10"]


@pytest.fixture
def small_games(tmp_path):
    a, b = suite.split_fe_pool()
    paths = {}
    for tag, pool, seed in (("src", a, 0), ("tgt", b, 7)):
        specs = suite.fe_instances(2, seed, pool=pool, rows=6, cols=6, max_steps=12,
                                   prefix=tag)
        for spec in specs:
            p = tmp_path / f"{spec.name}.game"
            p.write_text(serialize_game_spec(spec))
            paths.setdefault(tag, []).append(str(p))
    return paths


def test_include_and_override(tmp_path):
    (tmp_path / "base.cfg").write_text("k = 5\nd = 12\nseeds = 1,2\n# comment\n")
    (tmp_path / "run.cfg").write_text("include = base.cfg\nd = 16  # mine wins\n")
    values = load_config_file(tmp_path / "run.cfg")
    assert values == {"k": "5", "d": "16", "seeds": "1,2"}


def test_include_cycle(tmp_path):
    (tmp_path / "a.cfg").write_text("include = b.cfg\n")
    (tmp_path / "b.cfg").write_text("include = a.cfg\n")
    with pytest.raises(ConfigError) as exc:
        load_config_file(tmp_path / "a.cfg")
    assert exc.value.field == "include"


def test_bad_lines_and_keys(tmp_path):
    with pytest.raises(ConfigError):
        parse_config_text("just words\n")
    with pytest.raises(ConfigError) as exc:
        build_config({"mode": "multitask", "games": "nav", "out": str(tmp_path),
                      "colour": "red"})
    assert exc.value.field == "colour"
    with pytest.raises(ConfigError) as exc:
        build_config({"mode": "multitask", "games": "freeway_l1", "out": str(tmp_path),
                      "k": "4"})
    assert exc.value.field == "k"
    with pytest.raises(ConfigError) as exc:
        build_config({"mode": "multitask", "games": "freeway_l1", "out": str(tmp_path),
                      "gamma": "1.5"})
    assert exc.value.field == "train"


def test_out_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("TEXTVIN_OUT", str(tmp_path))
    cfg = build_config({"mode": "multitask", "games": "freeway_l1"})
    assert cfg.out == str(tmp_path)
    monkeypatch.delenv("TEXTVIN_OUT")
    with pytest.raises(ConfigError) as exc:
        build_config({"mode": "multitask", "games": "freeway_l1"})
    assert exc.value.field == "out"


def test_desk_scale_shrinks_horizons(tmp_path):
    cfg = build_config({"mode": "multitask", "games": "freeway_l1", "out": str(tmp_path),
                        "desk_scale": "1"})
    assert cfg.metric_horizon == 10_000
    assert cfg.train_config(0).lr_anneal_steps == 10_000


def test_resolve_games(small_games):
    specs = resolve_games(["freeway_l1", "bomberman_l2"])
    assert [s.name for s in specs] == ["freeway_l1", "bomberman_l2"]
    assert len(resolve_games(["fe1:3"], seed=1)) == 3
    with pytest.raises(ConfigError):
        resolve_games(["no_such_game"])
    with pytest.raises(ConfigError):
        resolve_games(["freeway_l1", small_games["src"][0]])


def test_eval_on_empty_dir(tmp_path, capsys):
    assert main(["eval", "--out", str(tmp_path / "missing")]) == 2
    assert not (tmp_path / "missing").exists()
    (tmp_path / "empty").mkdir()
    assert main(["eval", "--out", str(tmp_path / "empty")]) == 2
    assert "config error" in capsys.readouterr().err


def test_transfer_scenario_shape():
    src, tgt = suite.scenario("fe1_to_fe2", seed=0)
    assert (len(src), len(tgt)) == (7, 3)
    assert all(a.speed <= b.speed for s, t in [(src[0], tgt[0])]
               for a, b in zip(s.entities, s.entities))


def run_multitask(out, games, seed=3):
    argv = ["multitask", "--out", str(out), "--seed", str(seed), "--steps", "60"] + FAST
    for g in games:
        argv += ["--game", g]
    return main(argv)


def test_multitask_artifacts_and_determinism(tmp_path, small_games):
    for run in ("a", "b"):
        assert run_multitask(tmp_path / run, small_games["src"]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    for name in ("seed_3/train_log.csv", "seed_3/train_curve.csv", "seed_3/train.ckpt",
                 "seed_3/train.ckpt.manifest.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    snap = (a / "config_multitask.snapshot").read_text()
    assert "seeds = 3" in snap and "warmup = 20" in snap
    assert main(["eval", "--config", str(a / "config_multitask.snapshot"), "--out", str(a)]) == 0
    assert main(["eval", "--out", str(b)]) == 0
    assert (a / "train_metrics.csv").read_bytes() == (b / "train_metrics.csv").read_bytes()


def test_snapshot_reproduces_run(tmp_path, small_games):
    assert run_multitask(tmp_path / "a", small_games["src"]) == 0
    snap = tmp_path / "a" / "config_multitask.snapshot"
    assert main(["multitask", "--config", str(snap), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/seed_3/train_log.csv").read_bytes() == \
        (tmp_path / "b/seed_3/train_log.csv").read_bytes()


def test_transfer_and_inspect(tmp_path, small_games):
    argv = ["transfer", "--out", str(tmp_path), "--seed", "0", "--seed", "1",
            "--set", "source_steps=50", "--set", "target_steps=40", "--set", "baseline=1",
            "--set", "eval_every=2", "--set", "horizon=30",
            "--set", "source_games=" + ",".join(small_games["src"]),
            "--set", "target_games=" + ",".join(small_games["tgt"])] + FAST
    assert main(argv) == 0
    for seed in (0, 1):
        for tag in ("source", "target", "baseline"):
            assert (tmp_path / f"seed_{seed}" / f"{tag}_log.csv").is_file()
        assert (tmp_path / f"seed_{seed}" / "target_eval_curve.csv").is_file()
    report = (tmp_path / "target_metrics.txt").read_text()
    assert "jumpstart" in report and "seeds = 0,1" in report
    ckpt = tmp_path / "seed_0" / "target.ckpt"
    out = tmp_path / "maps"
    assert main(["inspect", "--out", str(out), "--set", f"checkpoint={ckpt}",
                 "--game", small_games["tgt"][0]]) == 0
    rows = next(out.glob("value_map_*.csv")).read_text().splitlines()
    assert len(rows) == 6


def test_synth_corpus(tmp_path):
    assert main(["synth-corpus", "--out", str(tmp_path), "--game", "freeway_l1",
                 "--game", "boulderchase_l1"]) == 0
    lines = (tmp_path / "corpus.tsv").read_text().splitlines()
    assert all(len(l.split("\t")) == 3 for l in lines)
    assert "unique_word_types" in (tmp_path / "corpus_stats.txt").read_text()
    assert main(["multitask", "--out", str(tmp_path / "r"), "--game", "freeway_l1",
                 "--set", f"corpus={tmp_path / 'corpus.tsv'}", "--steps", "5"] + FAST) == 0


def test_missing_corpus_and_bad_set(tmp_path):
    assert main(["multitask", "--out", str(tmp_path), "--game", "freeway_l1",
                 "--set", "corpus=/nonexistent.tsv"]) == 2
    assert main(["multitask", "--out", str(tmp_path), "--game", "freeway_l1",
                 "--set", "novalue"]) == 2


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "textvin", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "synth-corpus" in res.stdout
