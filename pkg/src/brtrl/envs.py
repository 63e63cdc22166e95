"""Cart-pole and mountain-car MDPs with a shared rollout driver.

Both environments are pure-Python scalar simulations so that a trajectory is
fully determined by the reset stream and the action sequence.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_EPISODE_STEPS = 200


class StepAfterDoneError(RuntimeError):
    """Raised when ``step`` is called on an episode that already ended."""


@dataclass(frozen=True)
class StepOutcome:
    next_state: np.ndarray
    reward: float
    done: bool
    # set when the episode ended only because the step cap was hit
    truncated: bool = False


@dataclass(frozen=True)
class StepRecord:
    state: np.ndarray
    action: int
    reward: float
    timestep: int


@dataclass
class EpisodeLog:
    """Arrays of visited states, chosen actions and rewards for one episode."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    probs: np.ndarray | None = field(default=None, repr=False)

    @property
    def total_reward(self) -> float:
        return float(math.fsum(self.rewards))

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def records(self) -> list[StepRecord]:
        return [
            StepRecord(self.states[i], int(self.actions[i]), float(self.rewards[i]), i)
            for i in range(len(self.actions))
        ]


class Environment:
    """Base class: subclasses implement ``_initial_state`` and ``_advance``."""

    name = "base"
    state_dim = 0
    n_actions = 0
    feature_names: tuple[str, ...] = ()

    def __init__(self, max_steps: int = MAX_EPISODE_STEPS):
        self.max_steps = max_steps
        self.state: tuple[float, ...] | None = None
        self.t = 0
        self.done = True

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = self._initial_state(rng)
        self.t = 0
        self.done = False
        return np.array(self.state)

    def step(self, action: int) -> StepOutcome:
        if self.state is None or self.done:
            raise StepAfterDoneError(f"{self.name}: step() called on a finished episode; call reset()")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"{self.name}: action {action} outside [0, {self.n_actions})")
        self.state, reward, terminal = self._advance(self.state, int(action))
        self.t += 1
        self.done = terminal or self.t >= self.max_steps
        return StepOutcome(np.array(self.state), reward, self.done, self.done and not terminal)

    def _initial_state(self, rng):  # pragma: no cover - abstract
        raise NotImplementedError

    def _advance(self, state, action):  # pragma: no cover - abstract
        raise NotImplementedError


class CartPole(Environment):
    """Barto et al. pole balancing with +1 reward per step (the failing step included).

    Semi-implicit ordering: positions advance with the current velocities,
    then velocities advance with the freshly computed accelerations.
    """

    name = "cartpole"
    state_dim = 4
    n_actions = 2
    feature_names = ("cart_pos", "cart_vel", "pole_angle", "pole_vel")

    gravity = 9.8
    cart_mass = 1.0
    pole_mass = 0.1
    total_mass = cart_mass + pole_mass
    half_length = 0.5
    pole_mass_length = pole_mass * half_length
    force_mag = 10.0
    tau = 0.02
    angle_limit = 12 * 2 * math.pi / 360
    position_limit = 2.4

    def _initial_state(self, rng):
        return tuple(float(v) for v in rng.uniform(-0.05, 0.05, size=4))

    @classmethod
    def accelerations(cls, state, action: int) -> tuple[float, float]:
        """Return (cart acceleration, pole angular acceleration)."""
        _, _, theta, theta_dot = state
        force = cls.force_mag if action == 1 else -cls.force_mag
        cos_t = math.cos(theta)
        sin_t = math.sin(theta)
        temp = (force + cls.pole_mass_length * theta_dot * theta_dot * sin_t) / cls.total_mass
        theta_acc = (cls.gravity * sin_t - cos_t * temp) / (
            cls.half_length * (4.0 / 3.0 - cls.pole_mass * cos_t * cos_t / cls.total_mass)
        )
        x_acc = temp - cls.pole_mass_length * theta_acc * cos_t / cls.total_mass
        return x_acc, theta_acc

    def _advance(self, state, action):
        x, x_dot, theta, theta_dot = state
        x_acc, theta_acc = self.accelerations(state, action)
        x = x + self.tau * x_dot
        theta = theta + self.tau * theta_dot
        x_dot = x_dot + self.tau * x_acc
        theta_dot = theta_dot + self.tau * theta_acc
        failed = abs(x) > self.position_limit or abs(theta) > self.angle_limit
        return (x, x_dot, theta, theta_dot), 1.0, failed


class MountainCar(Environment):
    """Under-powered car in a valley; -1 per step, 0 on the goal-reaching step."""

    name = "mountaincar"
    state_dim = 2
    n_actions = 3
    feature_names = ("position", "velocity")

    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.5
    power = 0.001
    gravity = 0.0025

    def _initial_state(self, rng):
        return (float(rng.uniform(-0.6, -0.4)), 0.0)

    def _advance(self, state, action):
        x, v = state
        v = v + self.power * (action - 1) - self.gravity * math.cos(3 * x)
        v = min(max(v, -self.max_speed), self.max_speed)
        x = x + v
        x = min(max(x, self.min_position), self.max_position)
        if x == self.min_position and v < 0:
            v = 0.0
        at_goal = x >= self.goal_position
        return (x, v), (0.0 if at_goal else -1.0), at_goal


ENVIRONMENTS: dict[str, type[Environment]] = {
    CartPole.name: CartPole,
    MountainCar.name: MountainCar,
}


def make_env(env_id: str) -> Environment:
    try:
        return ENVIRONMENTS[env_id]()
    except KeyError:
        raise ValueError(f"unknown environment id {env_id!r}; choose from {sorted(ENVIRONMENTS)}") from None


def run_episode(
    env: Environment,
    policy: Callable[[np.ndarray], int],
    rng: np.random.Generator,
    max_steps: int = MAX_EPISODE_STEPS,
) -> EpisodeLog:
    """Reset ``env`` with ``rng`` and follow ``policy`` until done or ``max_steps``."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    state = env.reset(rng)
    states, actions, rewards = [], [], []
    for _ in range(max_steps):
        action = int(policy(state))
        out = env.step(action)
        states.append(state)
        actions.append(action)
        rewards.append(out.reward)
        state = out.next_state
        if out.done:
            break
    return EpisodeLog(
        np.array(states, dtype=float).reshape(len(states), env.state_dim),
        np.array(actions, dtype=np.int64),
        np.array(rewards, dtype=float),
    )


def write_episodes_csv(path, logs: Iterable[EpisodeLog], state_dim: int) -> None:
    header = ["episode", "timestep"] + [f"state_{i}" for i in range(state_dim)] + ["action", "reward"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for ep, log in enumerate(logs):
            for t in range(len(log)):
                w.writerow([ep, t, *(repr(float(v)) for v in log.states[t]), int(log.actions[t]), repr(float(log.rewards[t]))])


def read_episodes_csv(path) -> list[EpisodeLog]:
    """Inverse of :func:`write_episodes_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = sum(1 for h in header if h.startswith("state_"))
        by_episode: dict[int, list[Sequence[str]]] = {}
        for row in reader:
            by_episode.setdefault(int(row[0]), []).append(row)
    logs = []
    for ep in sorted(by_episode):
        rows = by_episode[ep]
        logs.append(EpisodeLog(
            np.array([[float(v) for v in r[2:2 + dim]] for r in rows]).reshape(len(rows), dim),
            np.array([int(r[2 + dim]) for r in rows], dtype=np.int64),
            np.array([float(r[3 + dim]) for r in rows]),
        ))
    return logs
