"""Pursuit grid and one-step matrix games."""

import numpy as np
import pytest

from fgcoord.envs import (
    CAPTURE,
    SENTINEL,
    GridWorld,
    GridWorldConfig,
    MatrixGame,
    climb_game,
    oracle_optimal,
)


def small_config(**overrides):
    base = dict(width=5, height=5, n_agents=3, n_prey=1, capture_threshold=2,
                capture_reward=10.0, failed_capture_penalty=-1.0, time_limit=20)
    base.update(overrides)
    return GridWorldConfig(**base)


def make_world(agent_pos, prey_pos, **overrides):
    """World with hand-placed entities; the rng only drives prey drift."""
    env = GridWorld(small_config(**overrides))
    env.reset(np.random.default_rng(0))
    env.agent_pos = np.array(agent_pos, dtype=np.int64)
    env.prey_pos = np.array(prey_pos, dtype=np.int64)
    env.prey_alive = np.ones(len(prey_pos), dtype=bool)
    return env


class TestConfigValidation:
    def test_rejects_overfull_grid(self):
        with pytest.raises(ValueError):
            GridWorldConfig(width=2, height=2, n_agents=4, n_prey=1)

    def test_rejects_nonpositive_sizes(self):
        with pytest.raises(ValueError):
            small_config(width=0)
        with pytest.raises(ValueError):
            small_config(n_agents=0)
        with pytest.raises(ValueError):
            small_config(time_limit=0)
        with pytest.raises(ValueError):
            small_config(capture_threshold=0)


class TestReset:
    def test_places_distinct_entities(self):
        env = GridWorld(small_config())
        obs = env.reset(np.random.default_rng(3))
        assert obs.shape == (3, env.obs_dim)
        cells = {tuple(p) for p in env.agent_pos} | {tuple(p) for p in env.prey_pos}
        assert len(cells) == 4

    def test_deterministic_under_seed(self):
        env_a, env_b = GridWorld(small_config()), GridWorld(small_config())
        env_a.reset(np.random.default_rng(11))
        env_b.reset(np.random.default_rng(11))
        np.testing.assert_array_equal(env_a.agent_pos, env_b.agent_pos)
        np.testing.assert_array_equal(env_a.prey_pos, env_b.prey_pos)


class TestMovement:
    def test_basic_moves(self):
        env = make_world([[2, 2], [0, 0], [4, 4]], [[4, 0]])
        env.step([0, 1, 4])  # up, down, stay
        np.testing.assert_array_equal(env.agent_pos[0], [1, 2])
        np.testing.assert_array_equal(env.agent_pos[1], [1, 0])
        np.testing.assert_array_equal(env.agent_pos[2], [4, 4])

    def test_wall_blocks(self):
        env = make_world([[0, 2], [0, 0], [4, 4]], [[4, 0]])
        env.step([0, 2, 4])  # up into wall, left into wall
        np.testing.assert_array_equal(env.agent_pos[0], [0, 2])
        np.testing.assert_array_equal(env.agent_pos[1], [0, 0])

    def test_lower_id_wins_contested_cell(self):
        env = make_world([[2, 1], [2, 3], [4, 4]], [[0, 0]])
        env.step([3, 2, 4])  # both head for (2, 2)
        np.testing.assert_array_equal(env.agent_pos[0], [2, 2])
        np.testing.assert_array_equal(env.agent_pos[1], [2, 3])

    def test_vacated_cell_is_free_for_later_agent(self):
        env = make_world([[2, 2], [2, 3], [4, 4]], [[0, 0]])
        env.step([0, 2, 4])  # agent 0 vacates (2,2) first; agent 1 takes it
        np.testing.assert_array_equal(env.agent_pos[0], [1, 2])
        np.testing.assert_array_equal(env.agent_pos[1], [2, 2])

    def test_earlier_agent_cannot_use_later_vacancy(self):
        env = make_world([[2, 2], [2, 3], [4, 4]], [[0, 0]])
        env.step([3, 3, 4])  # agent 0 blocked by agent 1, which then moves on
        np.testing.assert_array_equal(env.agent_pos[0], [2, 2])
        np.testing.assert_array_equal(env.agent_pos[1], [2, 4])


class TestCapture:
    def test_joint_capture_removes_prey(self):
        env = make_world([[2, 2], [2, 4], [0, 0]], [[2, 3]])
        obs, reward, done = env.step([CAPTURE, CAPTURE, 4])
        assert reward == pytest.approx(10.0)
        assert done
        assert not env.prey_alive[0]
        assert env.last_events.captured_prey == [0]

    def test_lone_attempt_penalized_once(self):
        env = make_world([[2, 2], [0, 0], [0, 4]], [[2, 3]])
        _, reward, done = env.step([CAPTURE, 4, 4])
        assert reward == pytest.approx(-1.0)
        assert not done
        assert env.prey_alive[0]
        assert env.last_events.failed_prey == [0]

    def test_capture_away_from_prey_is_noop(self):
        env = make_world([[0, 0], [0, 2], [4, 4]], [[4, 0]])
        _, reward, _ = env.step([CAPTURE, CAPTURE, 4])
        assert reward == pytest.approx(0.0)
        np.testing.assert_array_equal(env.agent_pos[0], [0, 0])

    def test_threshold_three(self):
        env = make_world([[2, 2], [2, 4], [3, 3]], [[2, 3]],
                         capture_threshold=3)
        _, reward, _ = env.step([CAPTURE, CAPTURE, 4])
        assert reward == pytest.approx(-1.0)  # two of three needed capturers
        env2 = make_world([[2, 2], [2, 4], [3, 3]], [[2, 3]],
                          capture_threshold=3)
        _, reward2, done2 = env2.step([CAPTURE, CAPTURE, CAPTURE])
        assert reward2 == pytest.approx(10.0)
        assert done2

    def test_diagonal_adjacency_counts(self):
        env = make_world([[1, 2], [3, 4], [0, 0]], [[2, 3]])
        _, reward, done = env.step([CAPTURE, CAPTURE, 4])
        assert reward == pytest.approx(10.0)
        assert done


class TestPreyDrift:
    def test_prey_moves_to_free_cardinal_cell(self):
        env = make_world([[0, 0], [0, 1], [1, 0]], [[4, 4]])
        env.step([4, 4, 4])
        moved = env.prey_pos[0]
        assert tuple(moved) in {(3, 4), (4, 3)}

    def test_boxed_prey_stays(self):
        env = make_world([[3, 4], [4, 3], [0, 0]], [[4, 4]])
        env.step([4, 4, 4])
        np.testing.assert_array_equal(env.prey_pos[0], [4, 4])


class TestTermination:
    def test_time_limit(self):
        env = make_world([[0, 0], [0, 2], [4, 4]], [[2, 2]], time_limit=2)
        _, _, done = env.step([4, 4, 4])
        assert not done
        _, _, done = env.step([4, 4, 4])
        assert done
        with pytest.raises(RuntimeError):
            env.step([4, 4, 4])


class TestObservations:
    def test_corner_window_sentinels(self):
        env = make_world([[0, 0], [4, 4], [2, 2]], [[0, 1]])
        window = env.observe(0).reshape(2, 5, 5)
        in_grid = window[0] != SENTINEL
        assert in_grid.sum() == 9  # 3x3 visible from the corner
        assert window[0, 2, 2] == 1.0  # self
        assert window[1, 2, 3] == 1.0  # prey one cell right

    def test_sees_nearby_agent(self):
        env = make_world([[2, 2], [2, 4], [0, 0]], [[4, 4]])
        window = env.observe(0).reshape(2, 5, 5)
        assert window[0, 2, 4] == 1.0

    def test_dead_prey_invisible(self):
        env = make_world([[2, 2], [2, 4], [0, 0]], [[2, 3]])
        env.step([CAPTURE, CAPTURE, 4])
        window = env.observe(0).reshape(2, 5, 5)
        assert np.all(window[1][window[1] != SENTINEL] == 0.0)


class TestGlobalState:
    def test_layout_and_normalization(self):
        env = make_world([[0, 0], [4, 4], [2, 2]], [[4, 0]])
        state = env.global_state()
        assert state.shape == (2 * 3 + 3 * 1,)
        np.testing.assert_allclose(state[:6], [0, 0, 1, 1, 0.5, 0.5])
        np.testing.assert_allclose(state[6:8], [1.0, 0.0])
        assert state[8] == 1.0

    def test_dead_prey_marked(self):
        env = make_world([[2, 2], [2, 4], [0, 0]], [[2, 3]])
        env.step([CAPTURE, CAPTURE, 4])
        state = env.global_state()
        np.testing.assert_allclose(state[6:8], [SENTINEL, SENTINEL])
        assert state[8] == 0.0


class TestMatrixGame:
    def test_observations_identify_agents(self):
        game = MatrixGame(np.zeros((2, 2, 2)))
        obs = game.reset(np.random.default_rng(0))
        np.testing.assert_allclose(obs, np.eye(3))
        np.testing.assert_allclose(game.global_state(), [1.0])

    def test_single_step_payoff(self):
        payoff = np.arange(8.0).reshape(2, 2, 2)
        game = MatrixGame(payoff)
        game.reset(np.random.default_rng(0))
        _, reward, done = game.step([1, 0, 1])
        assert reward == pytest.approx(5.0)
        assert done
        with pytest.raises(RuntimeError):
            game.step([0, 0, 0])


class TestClimbGame:
    def test_flat_two_action_payoffs(self):
        # full enumeration of the 2^3 joint actions, capture is action 1
        game = climb_game(3, 2, 10.0, -1.5, scaled=False)
        expected = {
            (0, 0, 0): 0.0, (1, 1, 1): 10.0,
            (1, 0, 0): -1.5, (0, 1, 0): -1.5, (0, 0, 1): -1.5,
            (1, 1, 0): -1.5, (1, 0, 1): -1.5, (0, 1, 1): -1.5,
        }
        for joint, value in expected.items():
            assert game.payoff[joint] == pytest.approx(value)

    def test_scaled_penalty_grows_with_group(self):
        game = climb_game(3, 6, 10.0, -1.5, scaled=True)
        assert game.payoff[5, 5, 5] == pytest.approx(10.0)
        assert game.payoff[5, 0, 0] == pytest.approx(-1.5)
        assert game.payoff[5, 5, 0] == pytest.approx(-3.0)
        assert game.payoff[0, 1, 2] == pytest.approx(0.0)

    def test_uniform_play_disfavors_capture(self):
        # the trap: abstaining beats attempting under uniform co-players
        game = climb_game(3, 6)
        p = game.payoff
        ev_capture = p[5].mean()
        ev_other = p[0].mean()
        assert ev_capture < ev_other < 0.0

    def test_oracle_finds_unanimous_capture(self):
        game = climb_game(3, 2, 10.0, -1.5, scaled=False)
        action, value = oracle_optimal(game)
        np.testing.assert_array_equal(action, [1, 1, 1])
        assert value == pytest.approx(10.0)

    def test_oracle_tie_break_is_first_in_c_order(self):
        game = MatrixGame(np.zeros((2, 2)))
        action, value = oracle_optimal(game)
        np.testing.assert_array_equal(action, [0, 0])
        assert value == pytest.approx(0.0)
