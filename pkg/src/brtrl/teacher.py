"""SARSA(0) with tile coding: the teacher whose greedy policy gets distilled."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .envs import Environment

log = logging.getLogger(__name__)

# Tile-coding bounds per environment. Cart-pole velocities are unbounded, so
# the ranges below cover what a balancing policy actually visits; anything
# outside is clamped onto the edge tiles.
DEFAULT_BOUNDS = {
    "cartpole": ([-2.4, -3.0, -0.21, -3.5], [2.4, 3.0, 0.21, 3.5]),
    "mountaincar": ([-1.2, -0.07], [0.6, 0.07]),
}
DEFAULT_GAMMA = {"cartpole": 0.99, "mountaincar": 1.0}


class TileCoding:
    """Grid tilings over a box, each displaced by a fraction of a tile width.

    Tiling ``t`` is shifted along dimension ``d`` by ``((t * (2d + 1)) mod n) / n``
    tile widths. Each tiling carries one extra tile per dimension so the shifted
    grid still covers the upper bound.
    """

    def __init__(self, n_tilings: int, tiles_per_dim: Sequence[int], lows: Sequence[float], highs: Sequence[float]):
        self.n_tilings = int(n_tilings)
        self.tiles_per_dim = np.asarray(tiles_per_dim, dtype=np.int64)
        self.lows = np.asarray(lows, dtype=float)
        self.highs = np.asarray(highs, dtype=float)
        d = len(self.lows)
        if self.n_tilings < 1 or (self.tiles_per_dim < 1).any():
            raise ValueError("need at least one tiling and one tile per dimension")
        if len(self.tiles_per_dim) != d or len(self.highs) != d:
            raise ValueError("tiles_per_dim, lows and highs must have equal length")
        if not (self.highs > self.lows).all():
            raise ValueError("every upper bound must exceed its lower bound")
        self.width = (self.highs - self.lows) / self.tiles_per_dim
        t = np.arange(self.n_tilings)[:, None]
        odd = 2 * np.arange(d)[None, :] + 1
        self.offsets = ((t * odd) % self.n_tilings) / self.n_tilings
        grid = self.tiles_per_dim + 1
        self.tiles_per_tiling = int(np.prod(grid))
        strides = np.ones(d, dtype=np.int64)
        for i in range(d - 2, -1, -1):
            strides[i] = strides[i + 1] * grid[i + 1]
        self.strides = strides
        self.base = np.arange(self.n_tilings, dtype=np.int64) * self.tiles_per_tiling
        self.size = self.n_tilings * self.tiles_per_tiling

    @property
    def dim(self) -> int:
        return len(self.lows)

    def encode(self, state) -> np.ndarray:
        """Return the ``n_tilings`` active tile indices for ``state``."""
        s = np.asarray(state, dtype=float)
        if s.shape != (self.dim,):
            raise ValueError(f"state of shape {s.shape} does not match {self.dim}-d tile coding")
        s = np.minimum(np.maximum(s, self.lows), self.highs)
        coords = np.floor((s - self.lows) / self.width + self.offsets).astype(np.int64)
        np.minimum(coords, self.tiles_per_dim, out=coords)
        return coords @ self.strides + self.base


@dataclass
class QFunction:
    """Linear action values over tile features: ``weights[tile, action]``."""

    tiles: TileCoding
    weights: np.ndarray
    alpha: float = 0.3
    gamma: float = 1.0
    epsilon: float = 0.0

    @classmethod
    def zeros(cls, tiles: TileCoding, n_actions: int, **kw) -> "QFunction":
        return cls(tiles, np.zeros((tiles.size, n_actions)), **kw)

    @property
    def n_actions(self) -> int:
        return self.weights.shape[1]

    def values(self, state) -> np.ndarray:
        return self.weights[self.tiles.encode(state)].sum(axis=0)

    def q_value(self, state, action: int) -> float:
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} outside [0, {self.n_actions})")
        return float(self.weights[self.tiles.encode(state), action].sum())

    def greedy_action(self, state) -> int:
        return int(np.argmax(self.values(state)))

    def greedy_policy(self):
        return self.greedy_action

    def sarsa_update(self, tiles_idx, action, reward, next_value=None) -> float:
        """One SARSA step; ``next_value`` is q(s', a') or None at a terminal state."""
        q = self.weights[tiles_idx, action].sum()
        target = reward if next_value is None else reward + self.gamma * next_value
        delta = target - q
        self.weights[tiles_idx, action] += (self.alpha / self.tiles.n_tilings) * delta
        return delta

    def dumps(self) -> str:
        tc = self.tiles
        lines = [
            "SARSA v1",
            f"actions={self.n_actions} alpha={self.alpha!r} gamma={self.gamma!r} epsilon={self.epsilon!r}",
            f"tilings={tc.n_tilings} tiles={','.join(str(int(t)) for t in tc.tiles_per_dim)} "
            f"lows={','.join(repr(float(v)) for v in tc.lows)} highs={','.join(repr(float(v)) for v in tc.highs)}",
            f"weights={self.weights.shape[0]}",
        ]
        lines += [" ".join(repr(float(v)) for v in row) for row in self.weights]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "QFunction":
        lines = text.splitlines()
        if lines[0].strip() != "SARSA v1":
            raise ValueError(f"not a SARSA v1 teacher file: {lines[0]!r}")
        meta = {}
        for line in lines[1:4]:
            meta.update(tok.split("=", 1) for tok in line.split())
        tc = TileCoding(
            int(meta["tilings"]),
            [int(v) for v in meta["tiles"].split(",")],
            [float(v) for v in meta["lows"].split(",")],
            [float(v) for v in meta["highs"].split(",")],
        )
        n = int(meta["weights"])
        k = int(meta["actions"])
        rows = lines[4:4 + n]
        if len(rows) != n or n != tc.size:
            raise ValueError(f"teacher file has {len(rows)} weight rows, tiling needs {tc.size}")
        weights = np.array([[float(v) for v in row.split()] for row in rows]).reshape(n, k)
        return cls(tc, weights, float(meta["alpha"]), float(meta["gamma"]), float(meta["epsilon"]))


def default_tiles(env_id: str, n_tilings: int = 8, tiles_per_dim: int = 8) -> TileCoding:
    lows, highs = DEFAULT_BOUNDS[env_id]
    return TileCoding(n_tilings, [tiles_per_dim] * len(lows), lows, highs)


def epsilon_schedule(episode: int, episodes: int, start: float, end: float) -> float:
    if episodes <= 1:
        return start
    return start + (end - start) * episode / (episodes - 1)


def sarsa_train(
    env: Environment,
    tiles: TileCoding,
    episodes: int,
    rng: np.random.Generator,
    alpha: float = 0.3,
    gamma: float = 1.0,
    epsilon_start: float = 0.1,
    epsilon_end: float = 0.01,
) -> tuple[QFunction, list[float]]:
    """On-policy one-step SARSA with epsilon-greedy behaviour.

    Returns the learned Q-function and the per-episode total rewards. Episodes
    cut by the step cap bootstrap from the next state; true terminals do not.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    q = QFunction.zeros(tiles, env.n_actions, alpha=alpha, gamma=gamma, epsilon=epsilon_end)
    n_actions = env.n_actions

    def choose(values, eps):
        if rng.random() < eps:
            return int(rng.integers(n_actions))
        return int(np.argmax(values))

    curve = []
    for ep in range(episodes):
        eps = epsilon_schedule(ep, episodes, epsilon_start, epsilon_end)
        state = env.reset(rng)
        idx = tiles.encode(state)
        action = choose(q.weights[idx].sum(axis=0), eps)
        total = 0.0
        while True:
            out = env.step(action)
            total += out.reward
            if out.done and not out.truncated:
                q.sarsa_update(idx, action, out.reward)
                break
            next_idx = tiles.encode(out.next_state)
            next_values = q.weights[next_idx].sum(axis=0)
            next_action = choose(next_values, eps)
            q.sarsa_update(idx, action, out.reward, next_values[next_action])
            if out.done:
                break
            idx, action = next_idx, next_action
        curve.append(total)
        if (ep + 1) % 500 == 0:
            log.info("sarsa episode %d: mean reward (last 100) %.1f", ep + 1, np.mean(curve[-100:]))
    return q, curve
