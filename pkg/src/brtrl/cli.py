"""Command-line front end.

Every run resolves a flat ``key = value`` configuration (file first, then
flags), echoes it to ``<out>/config.echo`` and writes its artifacts next to it.
Exit status: 0 success, 2 configuration error, 3 I/O error, 4 contract
violation raised by the library.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import envs
from .boosting import GbmClassifier, GbmParams
from .pipeline import (
    DEFAULT_COLLECT_EPISODES,
    DEFAULT_EVAL_EPISODES,
    LabeledDataset,
    append_csv_row,
    collect,
    compare,
    distill,
    evaluate,
    fidelity,
)
from .plotting import plot_curve, render_svg
from .policy_gradient import PgConfig, PreferenceEnsemble, train
from .teacher import DEFAULT_GAMMA, QFunction, default_tiles, sarsa_train
from .trees import TreeParams, export_rules

log = logging.getLogger("brtrl")

EXIT_CONFIG, EXIT_IO, EXIT_CONTRACT = 2, 3, 4
REQUIRED = object()
MODES = ("teach", "collect", "distill", "evaluate", "pg", "pg-recycled", "export-tree", "plot", "repro")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class Key:
    type: Callable[[str], Any]
    default: Any
    help: str


def _optional_float(text: str):
    return None if text in ("", "auto", "none") else float(text)


KEYS: dict[str, Key] = {
    "env": Key(str, REQUIRED, "environment id: cartpole | mountaincar"),
    "seed": Key(int, 0, "master random seed"),
    "out": Key(str, None, "output directory (default: $BRTRL_OUT or ./brtrl_out)"),
    "teacher": Key(str, REQUIRED, "SARSA teacher file (collect, distill)"),
    "data": Key(str, REQUIRED, "recorded state/action CSV (distill)"),
    "model": Key(str, REQUIRED, "model file: GBM, PGE or SARSA (evaluate, export-tree)"),
    "curve": Key(str, REQUIRED, "curve CSV with episode,total_reward columns (plot)"),
    "window": Key(int, 100, "moving-average window for plots"),
    "teacher_episodes": Key(int, 1000, "SARSA training episodes"),
    "teacher_tilings": Key(int, 8, "number of tilings"),
    "teacher_tiles": Key(int, 8, "tiles per dimension"),
    "teacher_alpha": Key(float, 0.3, "SARSA step size (shared by the active tiles)"),
    "teacher_gamma": Key(_optional_float, None, "SARSA discount (auto: 0.99 cart-pole, 1.0 mountain car)"),
    "epsilon_start": Key(float, 0.1, "initial exploration rate"),
    "epsilon_end": Key(float, 0.01, "final exploration rate (linear decay)"),
    "collect_episodes": Key(int, DEFAULT_COLLECT_EPISODES, "teacher episodes recorded for distillation"),
    "eval_episodes": Key(int, DEFAULT_EVAL_EPISODES, "greedy evaluation episodes"),
    "gbm_rounds": Key(int, 30, "boosting rounds"),
    "gbm_shrinkage": Key(float, 0.3, "boosting shrinkage"),
    "gbm_max_depth": Key(int, 3, "student tree depth"),
    "gbm_min_samples_leaf": Key(int, 1, "student minimum leaf size"),
    "pg_batches": Key(int, 1000, "policy-gradient batches"),
    "pg_batch_episodes": Key(int, 10, "episodes per batch"),
    "pg_gamma": Key(float, 0.99, "policy-gradient discount"),
    "pg_learning_rate": Key(float, 0.002, "scale applied to each tree group"),
    "pg_baseline_step": Key(float, 0.5, "value-baseline boosting step"),
    "pg_max_depth": Key(int, 3, "policy tree depth"),
    "pg_min_samples_leaf": Key(int, 20, "policy tree minimum leaf size"),
    "pg_capacity": Key(int, 400, "group cap for pg-recycled"),
    "pg_blend": Key(float, 0.5, "weight on the recycled group's outputs"),
}

MODE_KEYS = {
    "teach": {"env"},
    "collect": {"env", "teacher"},
    "distill": {"env", "data", "teacher"},
    "evaluate": {"env", "model"},
    "pg": {"env"},
    "pg-recycled": {"env"},
    "export-tree": {"model"},
    "plot": {"curve"},
    "repro": {"env"},
}


def read_config_file(path) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key == "mode":
                values[key] = value
                continue
            if key not in KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = value
    return values


def resolve(mode: str, file_values: dict[str, str], flag_values: dict[str, str]) -> dict[str, Any]:
    if "mode" in file_values and file_values["mode"] != mode:
        raise ConfigError(f"key 'mode': config file says {file_values['mode']!r} but subcommand is {mode!r}")
    merged = {k: v for k, v in file_values.items() if k != "mode"}
    merged.update(flag_values)
    cfg: dict[str, Any] = {"mode": mode}
    for name, key in KEYS.items():
        if name in merged:
            try:
                cfg[name] = key.type(merged[name])
            except ValueError:
                raise ConfigError(f"key {name!r}: cannot parse {merged[name]!r}") from None
        elif key.default is REQUIRED:
            if name in MODE_KEYS[mode]:
                raise ConfigError(f"missing required key {name!r} for mode {mode!r}")
        else:
            cfg[name] = key.default
    if not 0 <= cfg["seed"] < 2**64:
        raise ConfigError(f"key 'seed': must be an unsigned 64-bit integer, got {cfg['seed']}")
    if cfg.get("out") is None:
        cfg["out"] = os.environ.get("BRTRL_OUT", "brtrl_out")
    if "env" in cfg and cfg["env"] not in envs.ENVIRONMENTS:
        raise ConfigError(f"key 'env': unknown environment {cfg['env']!r}; choose from {sorted(envs.ENVIRONMENTS)}")
    if "env" in cfg and cfg.get("teacher_gamma") is None:
        cfg["teacher_gamma"] = DEFAULT_GAMMA[cfg["env"]]
    return cfg


def echo_config(cfg: dict[str, Any]) -> str:
    lines = [f"mode = {cfg['mode']}"]
    for name in KEYS:
        if name in cfg:
            v = cfg[name]
            lines.append(f"{name} = {v!r}" if isinstance(v, float) else f"{name} = {v}")
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _rng(cfg, stream: int) -> np.random.Generator:
    # one independent stream per pipeline stage
    return np.random.default_rng([cfg["seed"], stream])


def _env_factory(cfg):
    return envs.ENVIRONMENTS[cfg["env"]]


def _gbm_params(cfg, n_actions) -> GbmParams:
    return GbmParams(cfg["gbm_rounds"], cfg["gbm_shrinkage"],
                     TreeParams(cfg["gbm_max_depth"], cfg["gbm_min_samples_leaf"]), n_actions)


def _pg_config(cfg, recycled: bool) -> PgConfig:
    return PgConfig(
        batch_episodes=cfg["pg_batch_episodes"],
        gamma=cfg["pg_gamma"],
        total_batches=cfg["pg_batches"],
        tree_params=TreeParams(cfg["pg_max_depth"], cfg["pg_min_samples_leaf"]),
        learning_rate=cfg["pg_learning_rate"],
        baseline_step=cfg["pg_baseline_step"],
        capacity=cfg["pg_capacity"] if recycled else None,
        recycle_blend=cfg["pg_blend"],
    )


def load_model(path):
    text = Path(path).read_text(encoding="utf-8")
    head = text.split("\n", 1)[0]
    if head.startswith("GBM "):
        return GbmClassifier.loads(text)
    if head.startswith("PGE "):
        return PreferenceEnsemble.loads(text)
    if head.startswith("SARSA "):
        return QFunction.loads(text)
    raise ValueError(f"{path}: unrecognised model header {head!r}")


def greedy(model) -> Callable:
    if isinstance(model, QFunction):
        return model.greedy_action
    if isinstance(model, GbmClassifier):
        return model.predict_action
    return model.greedy_action


def write_curve_csv(path: Path, rows) -> None:
    lines = ["episode,total_reward,ensemble_groups,total_nodes"]
    lines += [f"{r.episode},{r.total_reward!r},{r.ensemble_groups},{r.total_nodes}" for r in rows]
    _write(path, "\n".join(lines) + "\n")


def write_reward_csv(path: Path, rewards) -> None:
    lines = ["episode,total_reward"] + [f"{i},{float(r)!r}" for i, r in enumerate(rewards)]
    _write(path, "\n".join(lines) + "\n")


def do_teach(cfg, out: Path, prefix: str = "teacher"):
    env = _env_factory(cfg)()
    tiles = default_tiles(cfg["env"], cfg["teacher_tilings"], cfg["teacher_tiles"])
    q, rewards = sarsa_train(env, tiles, cfg["teacher_episodes"], _rng(cfg, 0), cfg["teacher_alpha"],
                             cfg["teacher_gamma"], cfg["epsilon_start"], cfg["epsilon_end"])
    _write(out / f"{prefix}.sarsa", q.dumps())
    write_reward_csv(out / f"{prefix}_curve.csv", rewards)
    _write(out / f"{prefix}_curve.svg", render_svg(np.arange(len(rewards)), rewards, cfg["window"],
                                                   f"SARSA training, {cfg['env']}"))
    final = float(np.mean(rewards[-100:]))
    print(f"teacher env={cfg['env']} episodes={len(rewards)} final100_mean_reward={final:.6g}")
    return q


def do_collect(cfg, out: Path, teacher=None) -> LabeledDataset:
    teacher = teacher if teacher is not None else load_model(cfg["teacher"])
    data = collect(greedy(teacher), _env_factory(cfg)(), cfg["collect_episodes"], _rng(cfg, 1))
    data.write_csv(out / "data.csv")
    print(f"collected env={cfg['env']} episodes={cfg['collect_episodes']} samples={len(data)}")
    return data


def do_distill(cfg, out: Path, data=None, teacher=None):
    env = _env_factory(cfg)()
    data = data if data is not None else LabeledDataset.read_csv(cfg["data"])
    teacher = teacher if teacher is not None else load_model(cfg["teacher"])
    train_set, test_set = data.split_by_episode()
    student = distill(train_set, _gbm_params(cfg, env.n_actions))
    teacher_report = evaluate(greedy(teacher), env, cfg["eval_episodes"], _rng(cfg, 2))
    student_report = evaluate(student.predict_action, env, cfg["eval_episodes"], _rng(cfg, 2))
    report = compare(teacher_report, student_report, student, fidelity(student, test_set), cfg["env"])
    _write(out / "model.gbm", student.dumps())
    _write(out / "distill_report.txt", report.to_text())
    _write(out / "rules.txt", export_model_rules(student, env.feature_names))
    write_reward_csv(out / "student_eval.csv", student_report.rewards)
    _write(out / "student_eval.svg", render_svg(np.arange(student_report.n_episodes), student_report.rewards,
                                                min(cfg["window"], student_report.n_episodes),
                                                f"Distilled ensemble, {cfg['env']}"))
    append_csv_row(out / "experiments.csv", {"mode": "distill", "seed": cfg["seed"], **report.as_dict()})
    print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in report.as_dict().items()))
    return student, report


def do_evaluate(cfg, out: Path):
    model = load_model(cfg["model"])
    env = _env_factory(cfg)()
    report = evaluate(greedy(model), env, cfg["eval_episodes"], _rng(cfg, 2))
    nodes = model.total_nodes() if hasattr(model, "total_nodes") else ""
    row = {"mode": "evaluate", "env": cfg["env"], "model": cfg["model"], "seed": cfg["seed"],
           **report.summary(), "total_nodes": nodes}
    append_csv_row(out / "experiments.csv", row)
    print(f"env={cfg['env']} model={cfg['model']} {report.line()} total_nodes={nodes}")
    return report


def do_pg(cfg, out: Path, recycled: bool, prefix: str = ""):
    config = _pg_config(cfg, recycled)
    ensemble, curve = train(_env_factory(cfg), config, _rng(cfg, 3 if recycled else 4))
    write_curve_csv(out / f"{prefix}curve.csv", curve)
    title = f"Policy gradient boosting{' with recycling' if recycled else ''}, {cfg['env']}"
    _write(out / f"{prefix}curve.svg", plot_curve(out / f"{prefix}curve.csv", cfg["window"], title))
    _write(out / f"{prefix}model.pge", ensemble.dumps())
    rewards = [r.total_reward for r in curve]
    tail = float(np.mean(rewards[-500:])) if rewards else float("nan")
    row = {"mode": "pg-recycled" if recycled else "pg", "env": cfg["env"], "seed": cfg["seed"],
           "episodes": len(curve), "final500_mean_reward": tail, "groups": len(ensemble),
           "total_nodes": ensemble.total_nodes()}
    _write(out / f"{prefix}pg_report.txt", "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n"
                                                  for k, v in row.items()))
    append_csv_row(out / "experiments.csv", row)
    print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return ensemble, curve


def export_model_rules(model, feature_names) -> str:
    if isinstance(model, GbmClassifier):
        blocks = [(f"# round {m} action {k} (x{model.shrinkage:g})", t)
                  for m, stage in enumerate(model.stages) for k, t in enumerate(stage)]
    elif isinstance(model, PreferenceEnsemble):
        blocks = [(f"# group {g} action {k} (x{model.learning_rate:g})", t)
                  for g, group in enumerate(model.groups) for k, t in enumerate(group)]
    else:
        raise ValueError("rule export needs a GBM or PGE tree model")
    return "\n".join(f"{title}\n{export_rules(tree, feature_names)}\n" for title, tree in blocks)


def _feature_names(cfg, model) -> list[str]:
    if "env" in cfg:
        return list(envs.ENVIRONMENTS[cfg["env"]].feature_names)
    trees = model.trees if isinstance(model, GbmClassifier) else [t for g in model.groups for t in g]
    d = trees[0].n_features if trees and trees[0].n_features is not None else \
        max([int(t.feature.max()) for t in trees] + [0]) + 1
    return [f"x{i}" for i in range(d)]


def do_export(cfg, out: Path):
    model = load_model(cfg["model"])
    text = export_model_rules(model, _feature_names(cfg, model))
    _write(out / "rules.txt", text)
    sys.stdout.write(text)


def do_plot(cfg, out: Path):
    svg = plot_curve(cfg["curve"], cfg["window"])
    target = out / (Path(cfg["curve"]).stem + ".svg")
    _write(target, svg)
    print(f"wrote {target}")


def do_repro(cfg, out: Path):
    """Teacher, distilled student, PG boosting and recycled PG for one environment."""
    q = do_teach(cfg, out)
    data = do_collect(cfg, out, teacher=q)
    do_distill(cfg, out, data=data, teacher=q)
    do_pg(cfg, out, recycled=False, prefix="pg_")
    do_pg(cfg, out, recycled=True, prefix="pg_recycled_")


def _default_label(key: Key) -> str:
    if key.default is REQUIRED:
        return "REQUIRED"
    return "default " + ("auto" if key.default is None else str(key.default))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brtrl",
        description="Interpretable RL with boosted regression trees.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Configuration keys (file 'key = value' or --key-name flag; flags win):\n" + "\n".join(
            f"  {name:<22} {_default_label(k):<18} {k.help}"
            for name, k in KEYS.items()
        ) + "\n\nRequired keys per subcommand:\n" + "\n".join(
            f"  {m:<12} {', '.join(sorted(MODE_KEYS[m]))}" for m in MODES
        ),
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run the {mode} stage")
        p.add_argument("--config", help="flat key = value configuration file")
        for name, key in KEYS.items():
            p.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, metavar="VALUE",
                           help=key.help)
    return parser


HANDLERS = {
    "teach": do_teach,
    "collect": do_collect,
    "distill": do_distill,
    "evaluate": do_evaluate,
    "pg": lambda cfg, out: do_pg(cfg, out, recycled=False),
    "pg-recycled": lambda cfg, out: do_pg(cfg, out, recycled=True),
    "export-tree": do_export,
    "plot": do_plot,
    "repro": do_repro,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        file_values = read_config_file(args.config) if args.config else {}
        flags = {name: getattr(args, name) for name in KEYS if getattr(args, name) is not None}
        cfg = resolve(args.mode, file_values, flags)
    except ConfigError as e:
        print(f"brtrl: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"brtrl: cannot read config: {e}", file=sys.stderr)
        return EXIT_IO
    try:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "config.echo", echo_config(cfg))
        HANDLERS[args.mode](cfg, out)
    except OSError as e:
        print(f"brtrl: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, envs.StepAfterDoneError) as e:
        print(f"brtrl: error: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    return 0


if __name__ == "__main__":
    sys.exit(main())
