import numpy as np
import pytest

from brtrl.envs import Environment, MountainCar
from brtrl.teacher import QFunction, TileCoding, default_tiles, epsilon_schedule, sarsa_train


def test_encode_single_tiling_grid():
    tc = TileCoding(1, [2], [0.0], [1.0])
    assert tc.encode([0.25]).tolist() == [0]
    assert tc.encode([0.75]).tolist() == [1]


def test_encode_lower_bound_and_clamping():
    tc = default_tiles("mountaincar")
    low = tc.encode([-1.2, -0.07])
    assert len(low) == 8 and (low >= 0).all()
    assert np.array_equal(tc.encode([-5.0, -1.0]), low)


def test_encode_same_cell_same_code():
    tc = TileCoding(1, [4, 4], [0.0, 0.0], [1.0, 1.0])
    assert np.array_equal(tc.encode([0.26, 0.51]), tc.encode([0.49, 0.74]))


def test_encode_dimension_mismatch():
    with pytest.raises(ValueError):
        default_tiles("mountaincar").encode([0.0, 0.0, 0.0])


def test_encode_counts_and_ranges():
    tc = default_tiles("cartpole")
    rng = np.random.default_rng(0)
    states = rng.uniform(-10, 10, size=(100_000, 4)) * np.array([1, 1, 0.1, 1])
    # vectorised check of the same arithmetic for every state
    clipped = np.clip(states, tc.lows, tc.highs)
    coords = np.floor((clipped[:, None, :] - tc.lows) / tc.width + tc.offsets[None]).astype(int)
    assert coords.min() >= 0 and (coords <= tc.tiles_per_dim).all()
    for s in states[:2000]:
        idx = tc.encode(s)
        assert len(idx) == tc.n_tilings
        assert ((idx >= tc.base) & (idx < tc.base + tc.tiles_per_tiling)).all()


def test_tiling_offsets_are_staggered():
    tc = TileCoding(8, [8, 8], [0, 0], [1, 1])
    assert np.array_equal(tc.offsets[1], [1 / 8, 3 / 8])
    assert len({tuple(o) for o in tc.offsets}) == 8


def test_q_values():
    tc = TileCoding(1, [2], [0.0], [1.0])
    q = QFunction.zeros(tc, 2)
    assert q.q_value([0.3], 0) == 0 and q.q_value([0.3], 1) == 0
    q.weights[0, 1] = -0.5
    assert q.q_value([0.3], 1) == -0.5
    before = [q.q_value([s], a) for s in (0.1, 0.9) for a in (0, 1)]
    q.weights *= 2
    assert [q.q_value([s], a) for s in (0.1, 0.9) for a in (0, 1)] == [2 * v for v in before]
    with pytest.raises(ValueError):
        q.q_value([0.3], 2)


def test_greedy_tie_break_and_preference():
    tc = default_tiles("mountaincar")
    q = QFunction.zeros(tc, 3)
    assert q.greedy_action([-0.5, 0.0]) == 0
    q.weights[tc.encode([-0.5, 0.0]), 2] = 1.0
    assert q.greedy_action([-0.5, 0.0]) == 2
    assert q.greedy_action([-0.5, 0.0]) == 2


def test_sarsa_terminal_update_oracle():
    tc = TileCoding(1, [2], [0.0], [1.0])
    q = QFunction.zeros(tc, 2, alpha=0.5)
    idx = tc.encode([0.25])
    q.sarsa_update(idx, 1, -1.0)
    assert q.weights[0, 1] == -0.5
    assert q.q_value([0.25], 1) == -0.5


def test_sarsa_nonterminal_update_oracle():
    tc = TileCoding(4, [3, 3], [0.0, 0.0], [1.0, 1.0])
    rng = np.random.default_rng(0)
    q = QFunction(tc, rng.normal(size=(tc.size, 2)), alpha=0.3, gamma=0.9)
    s, s2 = [0.2, 0.7], [0.4, 0.1]
    q_sa, q_next = q.q_value(s, 0), q.q_value(s2, 1)
    delta = -1.0 + 0.9 * q_next - q_sa
    idx = tc.encode(s)
    expected = q.weights.copy()
    expected[idx, 0] += 0.3 / 4 * delta
    q.sarsa_update(idx, 0, -1.0, q_next)
    assert np.abs(q.weights - expected).max() <= 1e-12


class _Bandit(Environment):
    """One-state environment used to observe action marginals."""

    name = "bandit"
    state_dim = 1
    n_actions = 3

    def __init__(self):
        super().__init__(max_steps=100)

    def _initial_state(self, rng):
        return (0.5,)

    def _advance(self, state, action):
        return state, 0.0, False


def test_full_exploration_is_uniform(monkeypatch):
    seen = []
    real_step = _Bandit.step

    def spy(self, action):
        seen.append(action)
        return real_step(self, action)

    monkeypatch.setattr(_Bandit, "step", spy)
    sarsa_train(_Bandit(), TileCoding(1, [1], [0.0], [1.0]), 100, np.random.default_rng(0),
                epsilon_start=1.0, epsilon_end=1.0)
    counts = np.bincount(seen, minlength=3)
    n = len(seen)
    sigma = np.sqrt(n * (1 / 3) * (2 / 3))
    assert n == 10_000
    assert (np.abs(counts - n / 3) <= 3 * sigma).all()


def test_zero_alpha_never_changes_weights():
    q, _ = sarsa_train(MountainCar(), default_tiles("mountaincar"), 3, np.random.default_rng(0), alpha=0.0)
    assert not q.weights.any()


def test_training_is_deterministic():
    a, ca = sarsa_train(MountainCar(), default_tiles("mountaincar"), 5, np.random.default_rng(9))
    b, cb = sarsa_train(MountainCar(), default_tiles("mountaincar"), 5, np.random.default_rng(9))
    assert ca == cb and np.array_equal(a.weights, b.weights)


def test_epsilon_schedule_linear():
    assert epsilon_schedule(0, 11, 0.1, 0.0) == 0.1
    assert epsilon_schedule(10, 11, 0.1, 0.0) == 0.0
    assert epsilon_schedule(5, 11, 0.1, 0.0) == pytest.approx(0.05)


def test_teacher_file_round_trip():
    q, _ = sarsa_train(MountainCar(), default_tiles("mountaincar"), 3, np.random.default_rng(1))
    text = q.dumps()
    assert text.startswith("SARSA v1\n")
    back = QFunction.loads(text)
    assert np.array_equal(back.weights, q.weights)
    assert back.dumps() == text


def test_mountaincar_teacher_reaches_goal():
    _, curve = sarsa_train(MountainCar(), default_tiles("mountaincar"), 5000, np.random.default_rng(0))
    rewards = np.array(curve[-100:])
    # -1 per step plus a zero-reward goal step
    steps = np.where(rewards > -200, 1 - rewards, 200)
    assert steps.mean() < 200
