import csv
import math

import numpy as np
import pytest

from brtrl.boosting import GbmParams
from brtrl.envs import CartPole, MountainCar
from brtrl.pipeline import (
    EvalReport,
    LabeledDataset,
    append_csv_row,
    collect,
    compare,
    distill,
    evaluate,
    fidelity,
    run_distillation,
)
from brtrl.trees import TreeParams


def balancer(s):
    return int(s[2] + 0.5 * s[3] > 0)


def test_collect_sizes_and_labels():
    data = collect(lambda s: 1, CartPole(), 5, np.random.default_rng(0))
    assert data.states.shape == (len(data), 4)
    assert (data.labels == 1).all()
    assert np.unique(data.episode).tolist() == list(range(5))
    assert len(data) < 5 * 200


def test_collect_deterministic():
    a = collect(balancer, CartPole(), 3, np.random.default_rng(4))
    b = collect(balancer, CartPole(), 3, np.random.default_rng(4))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.labels, b.labels)


def test_collect_rejects_zero_episodes():
    with pytest.raises(ValueError):
        collect(balancer, CartPole(), 0, np.random.default_rng(0))


def test_distill_constant_labels():
    data = collect(lambda s: 0, MountainCar(), 2, np.random.default_rng(0))
    model = distill(data, GbmParams(rounds=5, n_actions=3))
    assert (model.predict_action(data.states) == 0).all()
    assert fidelity(model, data) == 1.0


def test_zero_rounds_fidelity_is_action_zero_frequency():
    data = collect(balancer, CartPole(), 3, np.random.default_rng(1))
    model = distill(data, GbmParams(rounds=0))
    assert fidelity(model, data) == pytest.approx(np.mean(data.labels == 0), abs=1e-15)


def test_evaluate_balanced_cartpole():
    report = evaluate(balancer, CartPole(), 20, np.random.default_rng(0))
    assert report.mean_reward == 200 and report.std_reward == 0
    assert report.min_reward == report.max_reward == 200 and report.mean_length == 200


def test_evaluate_stuck_mountaincar_and_single_episode():
    report = evaluate(lambda s: 1, MountainCar(), 1, np.random.default_rng(0))
    assert report.n_episodes == 1
    assert report.mean_reward == -200 and report.std_reward == 0
    with pytest.raises(ValueError):
        evaluate(lambda s: 1, MountainCar(), 0, np.random.default_rng(0))


def test_compare_identical_and_node_budget():
    data = collect(balancer, CartPole(), 5, np.random.default_rng(2))
    model = distill(data, GbmParams(rounds=10, tree_params=TreeParams(max_depth=1)))
    r = evaluate(balancer, CartPole(), 3, np.random.default_rng(0))
    report = compare(r, r, model, fidelity(model, data), "cartpole")
    assert report.reward_gap == 0
    assert len(report.node_counts) == 20 and report.total_nodes <= 60
    with pytest.raises(ValueError):
        compare(r, r, model, 1.5)


def test_split_by_episode_holds_out_last_fifth():
    data = collect(balancer, CartPole(), 10, np.random.default_rng(3))
    train, test = data.split_by_episode()
    assert set(np.unique(train.episode)) == set(range(8))
    assert set(np.unique(test.episode)) == {8, 9}
    assert len(train) + len(test) == len(data)
    single = collect(balancer, CartPole(), 1, np.random.default_rng(3))
    tr, te = single.split_by_episode()
    assert len(tr) == len(single) and len(te) == 0
    assert math.isnan(fidelity(distill(tr, GbmParams(rounds=1)), te))


def test_dataset_csv_round_trip(tmp_path):
    data = collect(lambda s: 2, MountainCar(), 2, np.random.default_rng(0))
    path = tmp_path / "data.csv"
    data.write_csv(path)
    assert path.read_text().splitlines()[0] == "episode,state_0,state_1,action"
    back = LabeledDataset.read_csv(path)
    assert np.array_equal(back.states, data.states)
    assert np.array_equal(back.labels, data.labels)
    assert np.array_equal(back.episode, data.episode)


def test_report_text_and_csv_rows(tmp_path):
    result = run_distillation(CartPole, balancer, GbmParams(rounds=3), seed=0, collect_episodes=5, eval_episodes=3)
    text = result.report.to_text()
    fields = dict(line.split("=", 1) for line in text.splitlines())
    assert fields["env"] == "cartpole"
    assert int(fields["student_total_nodes"]) == sum(result.student.node_counts())
    path = tmp_path / "experiments.csv"
    append_csv_row(path, result.report.as_dict())
    append_csv_row(path, result.report.as_dict())
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and float(rows[0]["fidelity"]) == result.report.fidelity


def test_run_distillation_deterministic():
    a = run_distillation(CartPole, balancer, GbmParams(rounds=3), seed=5, collect_episodes=4, eval_episodes=2)
    b = run_distillation(CartPole, balancer, GbmParams(rounds=3), seed=5, collect_episodes=4, eval_episodes=2)
    assert a.student.dumps() == b.student.dumps()
    assert a.report.to_text() == b.report.to_text()


def test_eval_report_line():
    line = EvalReport([1.0, 3.0], [1, 3]).line()
    assert "mean_reward=2" in line and "n_episodes=2" in line
