"""Multiclass gradient boosting with softmax cross-entropy.

Each round fits one regression tree per class to the negative gradient
``1{label == k} - p_k`` and then rewrites its leaves with a one-step Newton
estimate. Raw scores start at zero, i.e. the uniform distribution.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trees import RegressionTree, TreeParams, TreeStack, fit_tree, parse_tree, dump_tree

NEWTON_EPS = 1e-10


def softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def cross_entropy(raw_scores, labels) -> float:
    """Mean negative log-likelihood of ``labels`` under softmax(raw_scores)."""
    raw_scores = np.atleast_2d(np.asarray(raw_scores, dtype=float))
    labels = np.asarray(labels, dtype=np.int64)
    m = raw_scores.max(axis=1, keepdims=True)
    log_z = (m + np.log(np.exp(raw_scores - m).sum(axis=1, keepdims=True))).ravel()
    return float(np.mean(log_z - raw_scores[np.arange(len(labels)), labels]))


def residuals(raw_scores, labels, n_actions: int) -> np.ndarray:
    """Negative gradient of the cross-entropy w.r.t. each raw score, shape (n, K)."""
    onehot = np.eye(n_actions)[np.asarray(labels, dtype=np.int64)]
    return onehot - softmax(raw_scores)


@dataclass(frozen=True)
class GbmParams:
    rounds: int = 30
    shrinkage: float = 0.3
    tree_params: TreeParams = field(default_factory=TreeParams)
    n_actions: int = 2

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not 0 < self.shrinkage <= 1:
            raise ValueError("shrinkage must lie in (0, 1]")
        if self.n_actions < 2:
            raise ValueError("n_actions must be >= 2")


class GbmClassifier:
    """Staged boosted-tree classifier: ``stages[m][k]`` is round m's class-k tree."""

    def __init__(self, stages: list[list[RegressionTree]], shrinkage: float, n_actions: int):
        for i, stage in enumerate(stages):
            if len(stage) != n_actions:
                raise ValueError(f"round {i} has {len(stage)} trees, expected {n_actions}")
        self.stages = stages
        self.shrinkage = float(shrinkage)
        self.n_actions = int(n_actions)
        self._stack = None

    @property
    def rounds(self) -> int:
        return len(self.stages)

    @property
    def trees(self) -> list[RegressionTree]:
        return [t for stage in self.stages for t in stage]

    def node_counts(self) -> list[int]:
        return [t.node_count for t in self.trees]

    def total_nodes(self) -> int:
        return sum(self.node_counts())

    def raw_scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.stages:
            return np.zeros((len(X), self.n_actions))
        n_features = self.stages[0][0].n_features
        if n_features is not None and X.shape[1] != n_features:
            raise ValueError(f"state has {X.shape[1]} features, model was fit on {n_features}")
        if self._stack is None:
            self._stack = TreeStack(self.trees)
        per_tree = self._stack.predict(X).reshape(self.rounds, self.n_actions, len(X))
        # sum rounds in order so results match the staged accumulation in fit_gbm
        scores = np.zeros((self.n_actions, len(X)))
        for m in range(self.rounds):
            scores += self.shrinkage * per_tree[m]
        return scores.T

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        p = softmax(self.raw_scores(X))
        return p[0] if X.ndim == 1 else p

    def predict_action(self, X):
        X = np.asarray(X, dtype=float)
        a = np.argmax(self.predict_proba(np.atleast_2d(X)), axis=1)
        return int(a[0]) if X.ndim == 1 else a

    def __call__(self, state) -> int:
        return self.predict_action(state)

    def dumps(self) -> str:
        lines = [f"GBM v1 actions={self.n_actions} rounds={self.rounds} shrinkage={self.shrinkage!r}"]
        lines += [dump_tree(t) for t in self.trees]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "GbmClassifier":
        lines = text.splitlines()
        head = lines[0].split()
        if head[:2] != ["GBM", "v1"]:
            raise ValueError(f"not a GBM v1 model file: {lines[0]!r}")
        fields = dict(tok.split("=", 1) for tok in head[2:])
        k, m = int(fields["actions"]), int(fields["rounds"])
        pos, trees = 1, []
        for _ in range(k * m):
            tree, pos = parse_tree(lines, pos)
            trees.append(tree)
        stages = [trees[i * k:(i + 1) * k] for i in range(m)]
        return cls(stages, float(fields["shrinkage"]), k)


def newton_leaf_values(tree: RegressionTree, leaf_ids: np.ndarray, r: np.ndarray, n_actions: int) -> np.ndarray:
    """Replace each leaf by ((K-1)/K) * sum(r) / sum(|r|(1-|r|)) over its samples."""
    values = np.array(tree.value)
    num = np.bincount(leaf_ids, weights=r, minlength=tree.node_count)
    abs_r = np.abs(r)
    den = np.bincount(leaf_ids, weights=abs_r * (1.0 - abs_r), minlength=tree.node_count)
    leaves = np.unique(leaf_ids)
    values[leaves] = (n_actions - 1) / n_actions * num[leaves] / np.maximum(den[leaves], NEWTON_EPS)
    return values


def fit_gbm(X, labels, params: GbmParams, callback=None) -> GbmClassifier:
    """Fit ``params.rounds`` rounds of K per-class trees.

    ``callback(round_index, raw_scores)`` is invoked after every round when given.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("cannot fit a classifier on an empty dataset")
    if len(X) != len(labels):
        raise ValueError(f"{len(X)} states but {len(labels)} labels")
    K = params.n_actions
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"labels must lie in [0, {K})")
    F = np.zeros((len(X), K))
    stages = []
    for m in range(params.rounds):
        R = residuals(F, labels, K)
        stage = []
        for k in range(K):
            tree = fit_tree(X, R[:, k], params.tree_params)
            leaf_ids = tree.apply(X)
            tree = tree.with_values(newton_leaf_values(tree, leaf_ids, R[:, k], K))
            stage.append(tree)
            F[:, k] += params.shrinkage * tree.value[leaf_ids]
        stages.append(stage)
        if callback is not None:
            callback(m, F)
    return GbmClassifier(stages, params.shrinkage, K)
