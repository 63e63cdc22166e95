"""REINFORCE with boosted trees.

The policy is a softmax over action preferences. Each preference is a sum of
per-action regression trees, added one group (one tree per action) per batch
of episodes. A new group regresses the per-sample REINFORCE gradient
``advantage * (1{a == k} - p_k)``, so appending it is a functional gradient
step on the log-likelihood of advantageous actions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .boosting import softmax
from .envs import EpisodeLog, Environment
from .trees import RegressionTree, TreeParams, TreeStack, dump_tree, fit_tree, parse_tree

log = logging.getLogger(__name__)

BASELINE_CAPACITY = 200
# Leaves must average at least this many samples: single-sample leaves carry
# raw advantages of order 50 and destabilize the policy.
DEFAULT_POLICY_TREE = TreeParams(max_depth=3, min_samples_leaf=20)


class PreferenceEnsemble:
    """Ordered groups of per-action trees; ``f(s) = eta * sum of group outputs``."""

    def __init__(self, n_actions: int, learning_rate: float, groups: Sequence[Sequence[RegressionTree]] = ()):
        if n_actions < 2:
            raise ValueError("n_actions must be >= 2")
        if learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        self.n_actions = int(n_actions)
        self.learning_rate = float(learning_rate)
        self.groups: list[list[RegressionTree]] = []
        self._stack = None
        for g in groups:
            self.append(g)

    def copy(self) -> "PreferenceEnsemble":
        return PreferenceEnsemble(self.n_actions, self.learning_rate, [list(g) for g in self.groups])

    def __len__(self) -> int:
        return len(self.groups)

    def append(self, group: Sequence[RegressionTree]) -> None:
        if len(group) != self.n_actions:
            raise ValueError(f"group has {len(group)} trees, expected {self.n_actions}")
        self.groups.append(list(group))
        self._stack = None

    def pop_oldest(self) -> list[RegressionTree]:
        self._stack = None
        return self.groups.pop(0)

    def total_nodes(self) -> int:
        return sum(t.node_count for g in self.groups for t in g)

    def node_counts(self) -> list[int]:
        return [t.node_count for g in self.groups for t in g]

    def group_outputs(self, X) -> np.ndarray:
        """Per-group raw tree outputs, shape (groups, n_actions, rows)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.groups:
            return np.zeros((0, self.n_actions, len(X)))
        nf = self.groups[0][0].n_features
        if nf is not None and X.shape[1] != nf:
            raise ValueError(f"state has {X.shape[1]} features, ensemble was fit on {nf}")
        if self._stack is None:
            self._stack = TreeStack([t for g in self.groups for t in g])
        return self._stack.predict(X).reshape(len(self.groups), self.n_actions, len(X))

    def preferences(self, X) -> np.ndarray:
        """Action preferences, shape (rows, n_actions)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.groups:
            return np.zeros((len(X), self.n_actions))
        return self.learning_rate * self.group_outputs(X).sum(axis=0).T

    def policy_probs(self, X, uniform_offset: bool = True) -> np.ndarray:
        """Softmax of ``1/|A| + f(s)``; the constant offset cancels under softmax."""
        X = np.asarray(X, dtype=float)
        prefs = self.preferences(X)
        if uniform_offset:
            prefs = prefs + 1.0 / self.n_actions
        p = softmax(prefs)
        return p[0] if X.ndim == 1 else p

    def greedy_action(self, state) -> int:
        return int(np.argmax(self.policy_probs(state)))

    __call__ = greedy_action

    def dumps(self) -> str:
        lines = [f"PGE v1 actions={self.n_actions} eta={self.learning_rate!r} groups={len(self.groups)}"]
        lines += [dump_tree(t) for g in self.groups for t in g]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PreferenceEnsemble":
        lines = text.splitlines()
        head = lines[0].split()
        if head[:2] != ["PGE", "v1"]:
            raise ValueError(f"not a PGE v1 model file: {lines[0]!r}")
        fields = dict(tok.split("=", 1) for tok in head[2:])
        k, n_groups = int(fields["actions"]), int(fields["groups"])
        ens = cls(k, float(fields["eta"]))
        pos = 1
        for _ in range(n_groups):
            group = []
            for _ in range(k):
                tree, pos = parse_tree(lines, pos)
                group.append(tree)
            ens.append(group)
        return ens


class ValueBaseline:
    """Boosted squared-error value estimate ``v(s) = beta * sum(tree(s))``."""

    def __init__(self, step_size: float = 0.5, capacity: int = BASELINE_CAPACITY):
        if step_size <= 0:
            raise ValueError("baseline step size must be > 0")
        self.step_size = float(step_size)
        self.capacity = capacity
        self.trees: list[RegressionTree] = []
        self._stack = None

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.trees:
            return np.zeros(len(X))
        if self._stack is None:
            self._stack = TreeStack(self.trees)
        return self.step_size * self._stack.predict(X).sum(axis=0)

    def update(self, X, returns, tree_params: TreeParams) -> RegressionTree:
        """Fit one tree to ``returns - v(X)`` and append it; drops the oldest past capacity."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        returns = np.asarray(returns, dtype=float)
        if len(returns) == 0:
            raise ValueError("cannot update the baseline on an empty batch")
        tree = fit_tree(X, returns - self(X), tree_params)
        self.trees.append(tree)
        if self.capacity is not None and len(self.trees) > self.capacity:
            self.trees.pop(0)
        self._stack = None
        return tree


def update_baseline(baseline: ValueBaseline, X, returns, tree_params: TreeParams) -> ValueBaseline:
    baseline.update(X, returns, tree_params)
    return baseline


def sample_action(probs, rng: np.random.Generator) -> int:
    """Inverse-CDF draw over action indices in order."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or len(p) == 0 or (p < 0).any() or not np.isfinite(p).all():
        raise ValueError(f"malformed probability vector {p!r}")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
    u = rng.random()
    cum = 0.0
    for a, pa in enumerate(p):
        cum += pa
        if u < cum:
            return a
    # u landed in the rounding gap above the last partial sum
    return int(np.flatnonzero(p > 0)[-1])


def discounted_returns(rewards, gamma: float) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


@dataclass
class AdvantageBatch:
    """The list L of one batch, with rewards replaced by advantages."""

    states: np.ndarray
    actions: np.ndarray
    advantages: np.ndarray
    probs: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


def compute_advantages(batch: Sequence[EpisodeLog], baseline: ValueBaseline | Callable, gamma: float) -> AdvantageBatch:
    """Per-episode discounted returns minus the baseline value at each visited state."""
    states = np.concatenate([ep.states for ep in batch])
    actions = np.concatenate([ep.actions for ep in batch])
    returns = np.concatenate([discounted_returns(ep.rewards, gamma) for ep in batch])
    probs = np.concatenate([
        ep.probs if ep.probs is not None else np.full((len(ep), 0), np.nan) for ep in batch
    ])
    advantages = returns - np.asarray(baseline(states), dtype=float)
    return AdvantageBatch(states, actions, advantages, probs, returns)


def gradient_targets(records: AdvantageBatch, n_actions: int) -> np.ndarray:
    """``advantage * (1{a == k} - p_k)`` for every record and action, shape (n, K)."""
    onehot = np.eye(n_actions)[records.actions]
    return records.advantages[:, None] * (onehot - records.probs)


def _fit_group(states, targets, tree_params) -> list[RegressionTree]:
    return [fit_tree(states, targets[:, k], tree_params) for k in range(targets.shape[1])]


def train_round(ensemble: PreferenceEnsemble, records: AdvantageBatch, tree_params: TreeParams) -> PreferenceEnsemble:
    """Append one group fitted to the REINFORCE gradient targets (mutates and returns ``ensemble``)."""
    if len(records) == 0:
        raise ValueError("cannot train on an empty batch")
    ensemble.append(_fit_group(records.states, gradient_targets(records, ensemble.n_actions), tree_params))
    return ensemble


def train_round_recycled(
    ensemble: PreferenceEnsemble,
    records: AdvantageBatch,
    tree_params: TreeParams,
    capacity: int,
    blend: float,
) -> PreferenceEnsemble:
    """Capacity-capped :func:`train_round`.

    At capacity, the new group also regresses ``blend`` times the oldest
    group's outputs on the batch states, then the oldest group is dropped.
    With ``blend = 1`` and an exact refit the dropped contribution carries over
    unchanged.
    """
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    if len(records) == 0:
        raise ValueError("cannot train on an empty batch")
    if len(ensemble) < capacity:
        return train_round(ensemble, records, tree_params)
    targets = gradient_targets(records, ensemble.n_actions)
    while len(ensemble) >= capacity:
        oldest = ensemble.groups[0]
        old_out = np.stack([t.predict(records.states) for t in oldest], axis=1)
        targets = targets + blend * old_out
        ensemble.pop_oldest()
    ensemble.append(_fit_group(records.states, targets, tree_params))
    return ensemble


def surrogate_objective(ensemble: PreferenceEnsemble, records: AdvantageBatch) -> float:
    """Batch surrogate ``sum advantage * log pi(a | s)``."""
    p = ensemble.policy_probs(records.states)
    return float(records.advantages @ np.log(p[np.arange(len(records)), records.actions]))


@dataclass(frozen=True)
class PgConfig:
    batch_episodes: int = 10
    gamma: float = 0.99
    total_batches: int = 1000
    tree_params: TreeParams = DEFAULT_POLICY_TREE
    learning_rate: float = 0.002
    baseline_step: float = 0.5
    baseline_capacity: int | None = BASELINE_CAPACITY
    capacity: int | None = None
    recycle_blend: float = 0.5
    max_steps: int = 200

    def __post_init__(self):
        if self.batch_episodes < 1:
            raise ValueError("batch_episodes must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.total_batches < 0:
            raise ValueError("total_batches must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 <= self.recycle_blend <= 1.0:
            raise ValueError("recycle_blend must lie in [0, 1]")


def episode_rng(master_seed: int, episode: int) -> np.random.Generator:
    """Stream for one global episode index; independent of batch scheduling."""
    return np.random.default_rng([master_seed, episode])


def rollout_batch(
    env_factory: Callable[[], Environment],
    ensemble: PreferenceEnsemble,
    rngs: Sequence[np.random.Generator],
    max_steps: int = 200,
) -> list[EpisodeLog]:
    """Run one episode per stream in lockstep under the stochastic softmax policy.

    Each episode only ever touches its own stream (reset, then one draw per
    step), so results match running the episodes one after another.
    """
    envs = [env_factory() for _ in rngs]
    states = [env.reset(rng) for env, rng in zip(envs, rngs)]
    traces = [([], [], [], []) for _ in envs]
    active = list(range(len(envs)))
    for _ in range(max_steps):
        if not active:
            break
        probs = ensemble.policy_probs(np.array([states[i] for i in active]))
        still = []
        for j, i in enumerate(active):
            a = sample_action(probs[j], rngs[i])
            out = envs[i].step(a)
            s_list, a_list, r_list, p_list = traces[i]
            s_list.append(states[i])
            a_list.append(a)
            r_list.append(out.reward)
            p_list.append(probs[j])
            states[i] = out.next_state
            if not out.done:
                still.append(i)
        active = still
    d = envs[0].state_dim if envs else 0
    return [
        EpisodeLog(
            np.array(s, dtype=float).reshape(len(s), d),
            np.array(a, dtype=np.int64),
            np.array(r, dtype=float),
            np.array(p, dtype=float).reshape(len(p), ensemble.n_actions),
        )
        for s, a, r, p in traces
    ]


@dataclass
class CurveRow:
    episode: int
    total_reward: float
    ensemble_groups: int
    total_nodes: int


def train(
    env_factory: Callable[[], Environment],
    config: PgConfig,
    rng: np.random.Generator,
    progress: Callable[[int, list[CurveRow]], None] | None = None,
) -> tuple[PreferenceEnsemble, list[CurveRow]]:
    """Batch REINFORCE with trees; returns the ensemble and one curve row per episode.

    Each batch: roll out under the current policy, compute advantages with
    the current baseline, update the baseline, then add a policy group
    (recycling the oldest once ``config.capacity`` groups exist).
    """
    probe = env_factory()
    ensemble = PreferenceEnsemble(probe.n_actions, config.learning_rate)
    baseline = ValueBaseline(config.baseline_step, config.baseline_capacity)
    master_seed = int(rng.integers(2**63))
    curve: list[CurveRow] = []
    episode = 0
    for b in range(config.total_batches):
        rngs = [episode_rng(master_seed, episode + i) for i in range(config.batch_episodes)]
        batch = rollout_batch(env_factory, ensemble, rngs, config.max_steps)
        groups, nodes = len(ensemble), ensemble.total_nodes()
        for ep in batch:
            curve.append(CurveRow(episode, ep.total_reward, groups, nodes))
            episode += 1
        records = compute_advantages(batch, baseline, config.gamma)
        baseline.update(records.states, records.returns, config.tree_params)
        if config.capacity is None:
            train_round(ensemble, records, config.tree_params)
        else:
            train_round_recycled(ensemble, records, config.tree_params, config.capacity, config.recycle_blend)
        if progress is not None:
            progress(b, curve)
        if (b + 1) % 100 == 0:
            recent = [r.total_reward for r in curve[-500:]]
            log.info("batch %d: episodes %d, mean reward (last %d) %.1f, groups %d",
                     b + 1, episode, len(recent), float(np.mean(recent)), len(ensemble))
    return ensemble, curve
