"""Distillation workflow: record a teacher, fit a boosted student, compare both."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .boosting import GbmClassifier, GbmParams, fit_gbm
from .envs import Environment, EpisodeLog, run_episode

DEFAULT_COLLECT_EPISODES = 200
DEFAULT_EVAL_EPISODES = 100
HOLDOUT_FRACTION = 0.2


@dataclass
class LabeledDataset:
    states: np.ndarray
    labels: np.ndarray
    episode: np.ndarray  # source episode of each row

    def __post_init__(self):
        if not len(self.states) == len(self.labels) == len(self.episode):
            raise ValueError("states, labels and episode ids must have equal length")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_logs(cls, logs: Sequence[EpisodeLog]) -> "LabeledDataset":
        return cls(
            np.concatenate([log.states for log in logs]),
            np.concatenate([log.actions for log in logs]),
            np.concatenate([np.full(len(log), i, dtype=np.int64) for i, log in enumerate(logs)]),
        )

    def subset(self, mask) -> "LabeledDataset":
        return LabeledDataset(self.states[mask], self.labels[mask], self.episode[mask])

    def split_by_episode(self, holdout: float = HOLDOUT_FRACTION) -> tuple["LabeledDataset", "LabeledDataset"]:
        """Hold out the last ``holdout`` fraction of episodes (whole episodes only)."""
        episodes = np.unique(self.episode)
        n_test = max(1, int(round(holdout * len(episodes)))) if len(episodes) > 1 else 0
        cut = episodes[len(episodes) - n_test] if n_test else np.inf
        test = self.episode >= cut
        return self.subset(~test), self.subset(test)

    def write_csv(self, path) -> None:
        d = self.states.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode"] + [f"state_{i}" for i in range(d)] + ["action"])
            for e, s, a in zip(self.episode, self.states, self.labels):
                w.writerow([int(e), *(repr(float(v)) for v in s), int(a)])

    @classmethod
    def read_csv(cls, path) -> "LabeledDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[0] != "episode" or header[-1] != "action":
                raise ValueError(f"{path}: expected columns episode,state_*,action")
            rows = list(reader)
        d = len(header) - 2
        return cls(
            np.array([[float(v) for v in r[1:1 + d]] for r in rows]).reshape(len(rows), d),
            np.array([int(r[-1]) for r in rows], dtype=np.int64),
            np.array([int(r[0]) for r in rows], dtype=np.int64),
        )


@dataclass
class EvalReport:
    rewards: list[float] = field(repr=False)
    lengths: list[int] = field(repr=False)

    @property
    def n_episodes(self) -> int:
        return len(self.rewards)

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards))

    @property
    def std_reward(self) -> float:
        return float(np.std(self.rewards))

    @property
    def min_reward(self) -> float:
        return float(np.min(self.rewards))

    @property
    def max_reward(self) -> float:
        return float(np.max(self.rewards))

    @property
    def mean_length(self) -> float:
        return float(np.mean(self.lengths))

    def summary(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "mean_reward": self.mean_reward,
            "std_reward": self.std_reward,
            "min_reward": self.min_reward,
            "max_reward": self.max_reward,
            "mean_length": self.mean_length,
        }

    def line(self) -> str:
        s = self.summary()
        return " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in s.items())


def collect(policy: Callable, env: Environment, n_episodes: int, rng: np.random.Generator) -> LabeledDataset:
    """Roll out ``policy`` and record every visited state with the action it chose."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    return LabeledDataset.from_logs([run_episode(env, policy, rng) for _ in range(n_episodes)])


def distill(data: LabeledDataset, params: GbmParams) -> GbmClassifier:
    return fit_gbm(data.states, data.labels, params)


def evaluate(policy: Callable, env: Environment, n_episodes: int, rng: np.random.Generator) -> EvalReport:
    """Run greedy episodes and aggregate total rewards and lengths."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    logs = [run_episode(env, policy, rng) for _ in range(n_episodes)]
    return EvalReport([log.total_reward for log in logs], [len(log) for log in logs])


def fidelity(model: GbmClassifier, data: LabeledDataset) -> float:
    """Fraction of rows where the student's greedy action equals the recorded one."""
    if len(data) == 0:
        return float("nan")
    return float(np.mean(model.predict_action(data.states) == data.labels))


@dataclass
class DistillReport:
    env: str
    teacher: EvalReport
    student: EvalReport
    fidelity: float
    node_counts: list[int]

    @property
    def total_nodes(self) -> int:
        return sum(self.node_counts)

    @property
    def reward_gap(self) -> float:
        return self.student.mean_reward - self.teacher.mean_reward

    def as_dict(self) -> dict:
        out = {"env": self.env}
        out.update({f"teacher_{k}": v for k, v in self.teacher.summary().items()})
        out.update({f"student_{k}": v for k, v in self.student.summary().items()})
        out.update({
            "reward_gap": self.reward_gap,
            "fidelity": self.fidelity,
            "student_trees": len(self.node_counts),
            "student_total_nodes": self.total_nodes,
        })
        return out

    def to_text(self) -> str:
        lines = [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in self.as_dict().items()]
        lines.append("student_node_counts=" + ",".join(str(n) for n in self.node_counts))
        return "\n".join(lines) + "\n"


def compare(teacher_report: EvalReport, student_report: EvalReport, student: GbmClassifier,
            fidelity_value: float, env_id: str = "") -> DistillReport:
    if not 0.0 <= fidelity_value <= 1.0 and not math.isnan(fidelity_value):
        raise ValueError(f"fidelity {fidelity_value} outside [0, 1]")
    return DistillReport(env_id, teacher_report, student_report, fidelity_value, student.node_counts())


def append_csv_row(path, row: dict) -> None:
    """Append ``row`` to a CSV, writing the header first if the file is new."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        if new:
            w.writeheader()
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


@dataclass
class DistillResult:
    data: LabeledDataset
    student: GbmClassifier
    report: DistillReport


def run_distillation(
    env_factory: Callable[[], Environment],
    teacher_policy: Callable,
    params: GbmParams,
    seed: int,
    collect_episodes: int = DEFAULT_COLLECT_EPISODES,
    eval_episodes: int = DEFAULT_EVAL_EPISODES,
) -> DistillResult:
    """Collect, split 80/20 by episode, fit the student, evaluate both policies.

    Teacher and student are evaluated from the same sequence of start states.
    """
    collect_seq, eval_seq = np.random.SeedSequence(seed).spawn(2)
    env = env_factory()
    data = collect(teacher_policy, env, collect_episodes, np.random.default_rng(collect_seq))
    train_set, test_set = data.split_by_episode()
    student = distill(train_set, params)
    teacher_report = evaluate(teacher_policy, env, eval_episodes, np.random.default_rng(eval_seq))
    student_report = evaluate(student.predict_action, env, eval_episodes, np.random.default_rng(eval_seq))
    report = compare(teacher_report, student_report, student, fidelity(student, test_set), env.name)
    return DistillResult(data, student, report)
