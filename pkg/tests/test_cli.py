import re

import numpy as np
import pytest

from brtrl.cli import EXIT_CONFIG, build_parser, main, read_config_file, ConfigError
from brtrl.plotting import plot_curve, render_svg, trailing_mean

FAST_PG = ["--pg-batches", "3", "--pg-batch-episodes", "2"]


def run(argv, out):
    return main(list(argv) + ["--out", str(out)])


def test_pg_writes_artifacts(tmp_path, capsys):
    assert run(["pg", "--env", "cartpole", "--seed", "42", *FAST_PG], tmp_path) == 0
    for name in ("curve.csv", "curve.svg", "model.pge", "config.echo", "pg_report.txt", "experiments.csv"):
        assert (tmp_path / name).is_file(), name
    head = (tmp_path / "curve.csv").read_text().splitlines()
    assert head[0] == "episode,total_reward,ensemble_groups,total_nodes"
    assert len(head) == 1 + 6
    assert "total_nodes=" in (tmp_path / "pg_report.txt").read_text()
    assert "total_nodes=" in capsys.readouterr().out


def test_rerun_from_echo_is_bit_identical(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert run(["pg-recycled", "--env", "mountaincar", "--seed", "7", "--pg-capacity", "2", *FAST_PG], first) == 0
    echo = first / "config.echo"
    assert main(["pg-recycled", "--config", str(echo), "--out", str(second)]) == 0
    for name in ("curve.csv", "model.pge"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    assert (first / "config.echo").read_text().replace(str(first), "") == \
        (second / "config.echo").read_text().replace(str(second), "")


def test_invalid_env_names_key(tmp_path, capsys):
    assert run(["pg", "--env", "acrobot"], tmp_path) == EXIT_CONFIG
    assert "'env'" in capsys.readouterr().err


def test_missing_required_key(tmp_path, capsys):
    assert run(["collect", "--env", "cartpole"], tmp_path) == EXIT_CONFIG
    assert "'teacher'" in capsys.readouterr().err
    assert not (tmp_path / "config.echo").exists()


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("env = cartpole\nlearning_rat = 0.1\n")
    with pytest.raises(ConfigError, match="learning_rat"):
        read_config_file(cfg)
    assert main(["pg", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "learning_rat" in capsys.readouterr().err


def test_flags_override_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nenv = cartpole\nseed = 1\npg_batches = 2\npg_batch_episodes = 1\n")
    assert main(["pg", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / "o")]) == 0
    echo = (tmp_path / "o" / "config.echo").read_text()
    assert "seed = 9" in echo and "pg_batches = 2" in echo


def test_unparseable_value_names_key(tmp_path, capsys):
    assert run(["pg", "--env", "cartpole", "--seed", "abc"], tmp_path) == EXIT_CONFIG
    assert "'seed'" in capsys.readouterr().err


def test_help_documents_required_keys():
    text = build_parser().format_help()
    assert "REQUIRED" in text and "pg_learning_rate" in text


def test_env_var_sets_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("BRTRL_OUT", str(tmp_path / "root"))
    assert main(["pg", "--env", "cartpole", *FAST_PG]) == 0
    assert (tmp_path / "root" / "model.pge").is_file()


def test_teach_collect_distill_evaluate_export(tmp_path, capsys):
    common = ["--env", "mountaincar", "--seed", "3"]
    assert run(["teach", *common, "--teacher-episodes", "20"], tmp_path) == 0
    teacher = str(tmp_path / "teacher.sarsa")
    assert run(["collect", *common, "--teacher", teacher, "--collect-episodes", "5"], tmp_path) == 0
    assert run(["distill", *common, "--teacher", teacher, "--data", str(tmp_path / "data.csv"),
                "--gbm-rounds", "3", "--eval-episodes", "3"], tmp_path) == 0
    report = (tmp_path / "distill_report.txt").read_text()
    assert re.search(r"^student_total_nodes=\d+$", report, re.M)
    assert (tmp_path / "rules.txt").read_text().startswith("# round 0 action 0")
    capsys.readouterr()

    model = str(tmp_path / "model.gbm")
    assert run(["evaluate", *common, "--model", model, "--eval-episodes", "2"], tmp_path) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    assert len(printed) == 1 and "mean_reward=" in printed[0]
    rows = (tmp_path / "experiments.csv").read_text().splitlines()
    assert sum(1 for r in rows if r.startswith("evaluate,")) == 1

    assert run(["export-tree", "--model", model], tmp_path) == 0
    out = capsys.readouterr().out
    assert "if " in out or "leaf: " in out
    assert "x0" in out or "position" in out or "pos" in out


def test_plot_subcommand(tmp_path):
    curve = tmp_path / "c.csv"
    curve.write_text("episode,total_reward\n0,1\n1,2\n2,3\n")
    assert run(["plot", "--curve", str(curve), "--window", "2"], tmp_path) == 0
    assert (tmp_path / "c.svg").read_text().startswith("<svg")


def test_plot_missing_file_is_io_error(tmp_path):
    assert run(["plot", "--curve", str(tmp_path / "nope.csv")], tmp_path) == 3


# --- plotting -------------------------------------------------------------------

def _polyline_ys(svg):
    lines = re.findall(r'<polyline points="([^"]*)"', svg)
    return [{pt.split(",")[1] for pt in pts.split()} for pts in lines]


def test_constant_curve_overlaps():
    svg = render_svg(np.arange(300), np.full(300, 200.0))
    raw, avg = _polyline_ys(svg)
    assert raw == avg and len(raw) == 1
    assert 'width="800" height="500"' in svg


def test_empty_curve_is_error(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("episode,total_reward\n")
    with pytest.raises(ValueError):
        plot_curve(path)


@pytest.mark.parametrize("body", ["x,y\n1,2\n", "episode,total_reward\n0,abc\n"])
def test_malformed_curve_is_error(tmp_path, body):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ValueError):
        plot_curve(path)


def test_plot_deterministic(tmp_path):
    path = tmp_path / "c.csv"
    rng = np.random.default_rng(0)
    path.write_text("episode,total_reward\n" + "".join(f"{i},{rng.normal()!r}\n" for i in range(500)))
    assert plot_curve(path, 50, "t") == plot_curve(path, 50, "t")


def test_trailing_mean():
    assert np.allclose(trailing_mean([1, 2, 3, 4], 2), [1, 1.5, 2.5, 3.5])
