import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textvin import suite
from textvin.corpus import generate_synthetic_corpus
from textvin.engine import reset
from textvin.evaluate import (EmptyLog, IoFailure, MetricsReport, NoEpisodesInHorizon,
                              NotConverged, RewardLog, asymptotic, average_reward,
                              bootstrap_band, compute_report, detect_convergence,
                              export_value_map, jumpstart, probe_state, read_reward_curve,
                              value_map_probe, write_reward_curve)
from textvin.qnet import ModelConfig, QNetwork


def log_of(rewards, steps=None, env="e"):
    steps = steps or [10 * (i + 1) for i in range(len(rewards))]
    return RewardLog.from_records((s, i, env, r) for i, (s, r) in
                                  enumerate(zip(steps, rewards)))


def test_average_reward_constant():
    assert average_reward(log_of([1.0] * 10), 10) == pytest.approx(0.9, abs=1e-15)


def test_average_reward_single_episode():
    assert average_reward(log_of([5.0]), 1) == 0.0


def test_average_reward_ramp():
    assert average_reward(log_of([i / 10 for i in range(11)]), 10) == pytest.approx(0.5)


def test_average_reward_empty():
    with pytest.raises(EmptyLog):
        average_reward(RewardLog(()), 10)


def test_jumpstart():
    lg = log_of([1.0, 3.0, 100.0], steps=[10, 20, 200_000])
    assert jumpstart(lg, 100_000) == 2.0
    with pytest.raises(NoEpisodesInHorizon):
        jumpstart(lg, 5)
    assert jumpstart(log_of([1.0, 3.0], steps=[10, 20_000]), 10_000) == 1.0


def test_asymptotic_flat_after_change():
    rewards = list(np.linspace(0, 5, 100)) + [5.0] * 400
    assert asymptotic(log_of(rewards), window_steps=10**6) == 5.0


def test_asymptotic_not_converged():
    with pytest.raises(NotConverged):
        asymptotic(log_of([0.01 * i for i in range(500)]), conv_window=50, slope_tol=1e-3)


def test_asymptotic_noisy_plateau():
    rng = np.random.default_rng(0)
    rewards = list(np.linspace(0, 2, 300)) + list(2.0 + rng.normal(0, 0.1, 2000))
    value = asymptotic(log_of(rewards), window_steps=10**6, conv_window=200, slope_tol=1e-3)
    assert value == pytest.approx(2.0, abs=0.02)


def test_detect_convergence_cases():
    assert detect_convergence(log_of([1.0] * 300), window=200) == 10 * 200
    assert detect_convergence(log_of([0.01 * i for i in range(300)]), 50, 1e-3) is None
    assert detect_convergence(log_of([1.0] * 10), window=200) is None


def test_detect_convergence_change_point():
    rng = np.random.default_rng(3)
    change = 400
    rewards = list(np.linspace(-1, 1, change)) + list(1 + rng.normal(0, 0.05, 600))
    window = 100
    step = detect_convergence(log_of(rewards), window, 1e-3)
    truth = 10 * (change + 1)
    assert abs(step - truth) <= 10 * window


def test_from_records_sorts_and_rejects_duplicates():
    lg = RewardLog.from_records([(30, 2, "a", 3.0), (10, 0, "a", 1.0), (20, 1, "b", 2.0)])
    assert list(lg.steps) == [10, 20, 30]
    assert lg.env_ids() == ["a", "b"]
    with pytest.raises(ValueError):
        RewardLog.from_records([(10, 0, "a", 1.0), (10, 1, "a", 2.0)])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=60), st.floats(-3, 3),
       st.randoms(use_true_random=False))
def test_metric_properties(rewards, c, rnd):
    lg = log_of(rewards)
    n = len(rewards)
    scaled = log_of([c * r for r in rewards])
    assert average_reward(scaled, n) == pytest.approx(c * average_reward(lg, n), abs=1e-9)
    rows = [(r.global_step, r.episode_index, r.env_id, r.episode_reward) for r in lg.records]
    rnd.shuffle(rows)
    shuffled = RewardLog.from_records(rows)
    assert average_reward(shuffled, n) == average_reward(lg, n)
    assert jumpstart(shuffled, 10**6) == jumpstart(lg, 10**6)


def test_report_text_and_csv():
    logs = [log_of([1.0] * 300), log_of([3.0] * 300)]
    rep = compute_report(logs, horizon=1000, window=10**6, seeds=(0, 1))
    assert rep.jumpstart == 2.0 and rep.asymptotic == 2.0 and rep.converged
    assert "average_reward = " in rep.to_text()
    assert rep.csv_row().count(",") == MetricsReport.CSV_HEADER.count(",")
    assert compute_report(logs, horizon=1000, window=10**6, seeds=(0, 1)).to_text() == \
        rep.to_text()
    with pytest.raises(EmptyLog):
        compute_report([])


def test_reward_curve_round_trip(tmp_path):
    lg = log_of([0.5, -1.0, 2.25], env="fe1_0")
    path = tmp_path / "curve.csv"
    write_reward_curve(lg, path)
    assert path.read_text().splitlines()[0] == "step,episode,env_id,reward"
    assert read_reward_curve(path) == lg
    with pytest.raises(IoFailure):
        write_reward_curve(lg, tmp_path / "missing" / "x.csv")


def test_bootstrap_band_brackets_mean():
    curves = np.random.default_rng(0).normal(size=(3, 20))
    mean, lo, hi = bootstrap_band(curves)
    assert np.all(lo <= mean + 1e-12) and np.all(mean <= hi + 1e-12)


def test_value_map_export(tmp_path):
    spec = suite.fe_instances(1, 0, rows=8, cols=8)[0]
    corp = generate_synthetic_corpus([spec])
    zero = QNetwork.create(ModelConfig(rows=8, cols=8, d=6), zero=True)
    v = export_value_map(zero, reset(spec, 0), corp, tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert len(lines) == 8 and all(len(l.split(",")) == 8 for l in lines)
    assert not v.any()
    with pytest.raises(IoFailure):
        export_value_map(zero, reset(spec, 0), corp, tmp_path / "nope" / "v.csv")


def test_probe_cases_cover_four_conditions():
    model = QNetwork.create(ModelConfig(rows=8, cols=8, d=6, seed=1))
    model.register(["fairy"])
    cases = {
        "seen_friend": ("fairy", None),
        "unseen_no_text": ("gremlin", None),
        "unseen_friend_text": ("gremlin", "a gremlin that is friendly".split()),
        "unseen_enemy_text": ("gremlin", "a gremlin that kills the player".split()),
    }
    out = value_map_probe(model, 8, 8, (0, 0), (4, 4), cases)
    assert set(out) == set(cases)
    assert all(v.shape == (8, 8) for v, _ in out.values())
    assert out["unseen_friend_text"][1] != out["unseen_enemy_text"][1]
    assert probe_state(8, 8, (0, 0), (4, 4), "gremlin").avatar_pos == (0, 0)
