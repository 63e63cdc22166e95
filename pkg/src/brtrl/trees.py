"""Least-squares CART regression trees.

Trees are stored as flat node arrays in pre-order. A leaf is marked by
``feature == -1``. Samples descend left when ``x[feature] < threshold``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

LEAF = -1


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 3
    min_samples_leaf: int = 1
    min_samples_split: int = 2

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.min_samples_split < 2:
            raise ValueError(f"min_samples_split must be >= 2, got {self.min_samples_split}")


class RegressionTree:
    """Immutable binary regression tree with scalar leaves."""

    __slots__ = ("feature", "threshold", "left", "right", "value", "n_features")

    def __init__(self, feature, threshold, left, right, value, n_features: int | None):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        # None when loaded from a block without a dimension field; skips checks
        self.n_features = None if n_features is None else int(n_features)
        for arr in (self.feature, self.threshold, self.left, self.right, self.value):
            arr.setflags(write=False)

    @classmethod
    def leaf(cls, value: float, n_features: int) -> "RegressionTree":
        return cls([LEAF], [0.0], [-1], [-1], [float(value)], n_features)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        def _depth(i):
            if self.feature[i] == LEAF:
                return 0
            return 1 + max(_depth(self.left[i]), _depth(self.right[i]))
        return _depth(0)

    def with_values(self, value) -> "RegressionTree":
        """Copy of this tree with leaf values replaced (internal entries ignored)."""
        return RegressionTree(self.feature, self.threshold, self.left, self.right, value, self.n_features)

    def _check_dim(self, X: np.ndarray) -> None:
        if self.n_features is not None and X.shape[-1] != self.n_features:
            raise ValueError(f"state has {X.shape[-1]} features, tree was fit on {self.n_features}")

    def apply(self, X) -> np.ndarray:
        """Index of the leaf reached by each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self._check_dim(X)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            internal = feat != LEAF
            if not internal.any():
                return node
            idx = rows[internal]
            n = node[internal]
            go_left = X[idx, feat[internal]] < self.threshold[n]
            node[internal] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def predict_one(self, state) -> float:
        state = np.asarray(state, dtype=float)
        self._check_dim(state)
        i = 0
        while self.feature[i] != LEAF:
            i = self.left[i] if state[self.feature[i]] < self.threshold[i] else self.right[i]
        return float(self.value[i])

    def __eq__(self, other):
        if not isinstance(other, RegressionTree):
            return NotImplemented
        return self.n_features == other.n_features and all(
            np.array_equal(a, b)
            for a, b in zip(
                (self.feature, self.threshold, self.left, self.right, self.value),
                (other.feature, other.threshold, other.left, other.right, other.value),
            )
        )

    def __repr__(self):
        return f"RegressionTree(nodes={self.node_count}, depth={self.depth})"


def node_count(tree: RegressionTree) -> int:
    return tree.node_count


def _best_split(X, y, w, min_leaf):
    """Return (feature, threshold, gain) maximizing the weighted SSE reduction.

    Scans features in order and thresholds ascending; only a strictly larger
    gain replaces the incumbent, so ties go to the lowest feature/threshold.
    """
    n, d = X.shape
    total_w = w.sum()
    total_wy = w @ y
    parent = total_wy * total_wy / total_w
    best = (None, None, -np.inf)
    tol = 1e-12 * max(1.0, abs(parent))
    if n < 2 * min_leaf:
        return best
    for j in range(d):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        ws = w[order]
        wys = ws * y[order]
        cw = np.cumsum(ws)[:-1]
        cwy = np.cumsum(wys)[:-1]
        rw = total_w - cw
        rwy = total_wy - cwy
        left_n = np.arange(1, n)
        valid = (xs[:-1] < xs[1:]) & (left_n >= min_leaf) & (n - left_n >= min_leaf) & (cw > 0) & (rw > 0)
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = cwy * cwy / cw + rwy * rwy / rw - parent
        gain = np.where(valid, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[2] + tol:
            thr = 0.5 * (xs[k] + xs[k + 1])
            if thr <= xs[k]:  # adjacent floats: midpoint rounds down
                thr = xs[k + 1]
            best = (j, thr, float(gain[k]))
    return best


def fit_tree(X, y, params: TreeParams = TreeParams(), sample_weight=None) -> RegressionTree:
    """Grow a tree greedily, choosing at each node the split with least weighted SSE."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(y) == 0:
        raise ValueError("cannot fit a tree on an empty dataset")
    if X.shape[0] != len(y):
        raise ValueError(f"{X.shape[0]} states but {len(y)} targets")
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float).ravel()
    if len(w) != len(y):
        raise ValueError(f"{len(w)} weights but {len(y)} targets")
    if (w < 0).any() or not (w > 0).any():
        raise ValueError("weights must be non-negative with at least one positive entry")

    feature, threshold, left, right, value = [], [], [], [], []

    def grow(idx, depth):
        node = len(feature)
        yi, wi = y[idx], w[idx]
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(wi @ yi / wi.sum()))
        if depth >= params.max_depth or len(idx) < params.min_samples_split or yi.min() == yi.max():
            return node
        j, thr, _ = _best_split(X[idx], yi, wi, params.min_samples_leaf)
        if j is None:
            return node
        mask = X[idx, j] < thr
        feature[node] = j
        threshold[node] = thr
        value[node] = 0.0
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    grow(np.arange(len(y)), 0)
    return RegressionTree(feature, threshold, left, right, value, X.shape[1])


def sse(tree: RegressionTree, X, y, sample_weight=None) -> float:
    """Weighted training sum of squared errors."""
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    r = tree.predict(X) - y
    return float(w @ (r * r))


def export_rules(tree: RegressionTree, feature_names: Sequence[str]) -> str:
    """Indented if/else listing; thresholds and leaf values use 6 significant digits."""
    if tree.n_features is not None and len(feature_names) != tree.n_features:
        raise ValueError(f"{len(feature_names)} feature names for a tree over {tree.n_features} features")
    lines: list[str] = []

    def walk(i, indent):
        pad = "  " * indent
        if tree.feature[i] == LEAF:
            lines.append(f"{pad}leaf: {tree.value[i]:.6g}")
            return
        lines.append(f"{pad}if {feature_names[tree.feature[i]]} < {tree.threshold[i]:.6g}")
        walk(tree.left[i], indent + 1)
        lines.append(f"{pad}else")
        walk(tree.right[i], indent + 1)

    walk(0, 0)
    return "\n".join(lines)


def dump_tree(tree: RegressionTree) -> str:
    header = f"TREE n={tree.node_count}"
    if tree.n_features is not None:
        header += f" d={tree.n_features}"
    lines = [header]

    def walk(i):
        if tree.feature[i] == LEAF:
            lines.append(f"L {float(tree.value[i])!r}")
        else:
            lines.append(f"I {int(tree.feature[i])} {float(tree.threshold[i])!r}")
            walk(tree.left[i])
            walk(tree.right[i])

    walk(0)
    return "\n".join(lines)


def parse_tree(lines: Sequence[str], pos: int = 0) -> tuple[RegressionTree, int]:
    """Parse one TREE block starting at ``lines[pos]``; return (tree, next position)."""
    header = lines[pos].split()
    if not header or header[0] != "TREE":
        raise ValueError(f"line {pos + 1}: expected TREE header, got {lines[pos]!r}")
    fields = dict(tok.split("=", 1) for tok in header[1:])
    n = int(fields["n"])
    body = lines[pos + 1:pos + 1 + n]
    if len(body) != n:
        raise ValueError(f"TREE block at line {pos + 1} is truncated")
    feature, threshold, value = [], [], []
    for line in body:
        parts = line.split()
        if parts[0] == "I":
            feature.append(int(parts[1]))
            threshold.append(float(parts[2]))
            value.append(0.0)
        elif parts[0] == "L":
            feature.append(LEAF)
            threshold.append(0.0)
            value.append(float(parts[1]))
        else:
            raise ValueError(f"bad tree node line {line!r}")
    left = [-1] * n
    right = [-1] * n
    cursor = 0

    def link():
        nonlocal cursor
        i = cursor
        if i >= n:
            raise ValueError("TREE block ended before all children were read")
        cursor += 1
        if feature[i] != LEAF:
            left[i] = link()
            right[i] = link()
        return i

    link()
    if cursor != n:
        raise ValueError(f"TREE block declares {n} nodes but the pre-order walk used {cursor}")
    d = int(fields["d"]) if "d" in fields else None
    return RegressionTree(feature, threshold, left, right, value, d), pos + 1 + n


def load_tree(text: str) -> RegressionTree:
    tree, _ = parse_tree(text.strip().splitlines())
    return tree


class TreeStack:
    """Many trees packed into one node arena for vectorized evaluation.

    Leaves point to themselves with an infinite threshold, so a fixed number
    of descent steps (the deepest tree's depth) lands every row on its leaf.
    """

    def __init__(self, trees: Sequence[RegressionTree]):
        self.n_trees = len(trees)
        if not trees:
            self.depth = 0
            return
        offsets = np.cumsum([0] + [t.node_count for t in trees[:-1]])
        self.roots = offsets.astype(np.int64)
        feat = np.concatenate([t.feature for t in trees])
        thr = np.concatenate([t.threshold for t in trees])
        left = np.concatenate([t.left + o for t, o in zip(trees, offsets)])
        right = np.concatenate([t.right + o for t, o in zip(trees, offsets)])
        leaf = feat == LEAF
        self_idx = np.arange(len(feat))
        self.feature = np.where(leaf, 0, feat)
        self.threshold = np.where(leaf, np.inf, thr)
        self.left = np.where(leaf, self_idx, left)
        self.right = np.where(leaf, self_idx, right)
        self.value = np.concatenate([t.value for t in trees])
        self.depth = max(t.depth for t in trees)

    def predict(self, X) -> np.ndarray:
        """Return an (n_trees, n_rows) matrix of per-tree predictions."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.n_trees == 0:
            return np.zeros((0, len(X)))
        node = np.repeat(self.roots[:, None], len(X), axis=1)
        cols = np.arange(len(X))[None, :]
        for _ in range(self.depth):
            go_left = X[cols, self.feature[node]] < self.threshold[node]
            node = np.where(go_left, self.left[node], self.right[node])
        return self.value[node]
