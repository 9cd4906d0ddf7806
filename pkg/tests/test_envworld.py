# File: tests/test_envworld.py
"""Tests for environments, the behavior policy and dataset files."""
import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.cluster.vq import kmeans2

from src.envworld import (
    BANDIT2GOAL,
    ENVIRONMENTS,
    REACH2GOAL,
    BehaviorPolicy,
    Dataset,
    bandit_reward,
    behavior_success_rate,
    env_reset,
    env_step,
    format_dataset,
    generate_dataset,
    get_env_spec,
    is_success,
    load_dataset,
    optimal_reward,
    parse_dataset,
    save_dataset,
)
from src.errors import ActionBoundError, DatasetFormatError, PreconditionError, UnknownEnvironmentError
from src.noise import NoiseSource


class TestRegistry:
    def test_known_environments(self):
        assert set(ENVIRONMENTS) == {"bandit2goal", "reach2goal"}
        assert get_env_spec("reach2goal") is REACH2GOAL

    def test_unknown_environment_lists_valid_names(self):
        with pytest.raises(UnknownEnvironmentError) as exc_info:
            get_env_spec("cartpole")
        assert "bandit2goal, reach2goal" in str(exc_info.value)


class TestReset:
    """Test suite for start states."""

    def test_bandit_starts_at_origin(self):
        np.testing.assert_array_equal(env_reset(BANDIT2GOAL, NoiseSource(3)), [0.0, 0.0])

    def test_reach_start_is_reproducible(self):
        a = env_reset(REACH2GOAL, NoiseSource(3))
        np.testing.assert_array_equal(a, env_reset(REACH2GOAL, NoiseSource(3)))
        assert np.all(np.abs(a) <= 0.1)

    def test_reach_start_is_centred(self):
        rng = NoiseSource(0)
        starts = np.array([env_reset(REACH2GOAL, rng.spawn(i)) for i in range(10_000)])
        np.testing.assert_allclose(starts.mean(axis=0), 0.0, atol=0.01)


class TestStep:
    """Test suite for the transition function."""

    def test_reach_move(self):
        x_next, reward, done = env_step(REACH2GOAL, np.zeros(2), np.array([0.2, 0.2]))
        np.testing.assert_allclose(x_next, [0.2, 0.2])
        assert reward == 0.0 and done is False

    def test_reach_goal(self):
        x_next, reward, done = env_step(REACH2GOAL, np.array([0.65, 0.65]), np.array([0.05, 0.05]))
        np.testing.assert_allclose(x_next, [0.7, 0.7])
        assert reward == 1.0 and done is True

    def test_reach_position_is_clipped(self):
        x_next, _, _ = env_step(REACH2GOAL, np.array([0.95, -0.95]), np.array([0.2, -0.2]))
        np.testing.assert_array_equal(x_next, [1.0, -1.0])

    def test_bandit_reward_at_goal(self):
        _, reward, done = env_step(BANDIT2GOAL, np.zeros(2), np.array([0.6, 0.6]))
        expected = 1.0 + 0.5 * math.exp(-(1.2**2 + 1.2**2) / (2 * 0.15**2))
        assert reward == pytest.approx(expected)
        assert done is True

    def test_out_of_bound_action(self):
        with pytest.raises(ActionBoundError):
            env_step(REACH2GOAL, np.zeros(2), np.array([0.3, 0.0]))

    def test_wrong_action_shape(self):
        with pytest.raises(PreconditionError):
            env_step(BANDIT2GOAL, np.zeros(2), np.zeros(3))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=2, max_size=2))
    def test_bandit_reward_range(self, action):
        """Bandit rewards stay in (0, 1.5]."""
        reward = bandit_reward(BANDIT2GOAL, np.array(action))
        assert 0.0 <= reward <= 1.5

    def test_success_threshold(self):
        assert is_success(REACH2GOAL, [0.0, 0.0, 1.0])
        assert not is_success(REACH2GOAL, [0.0] * 50)
        assert not is_success(BANDIT2GOAL, [0.5])

    def test_optimal_reward(self):
        assert optimal_reward(REACH2GOAL) == 1.0
        assert optimal_reward(BANDIT2GOAL) == pytest.approx(1.0, abs=1e-6)


class TestBehavior:
    """Test suite for the scripted data-generating policy."""

    def test_actions_respect_bound(self):
        policy = BehaviorPolicy(REACH2GOAL, NoiseSource(0))
        for _ in range(20):
            assert np.all(np.abs(policy.act(np.zeros(2))) <= REACH2GOAL.action_bound)

    def test_mode_fixed_per_episode(self):
        policy = BehaviorPolicy(BANDIT2GOAL, NoiseSource(4))
        target = policy.target.copy()
        policy.act(np.zeros(2))
        np.testing.assert_array_equal(policy.target, target)

    def test_reach_success_rate_is_about_half(self):
        rate = behavior_success_rate(REACH2GOAL, 400, NoiseSource(0))
        assert 0.4 <= rate <= 0.6


class TestGenerateDataset:
    def test_needs_transitions(self):
        with pytest.raises(PreconditionError):
            generate_dataset(BANDIT2GOAL, 0, NoiseSource(0))

    def test_exact_size(self, reach_dataset):
        assert len(reach_dataset) == 120
        assert reach_dataset.obs_dim == 2 and reach_dataset.action_dim == 2

    def test_bandit_mode_symmetry(self):
        dataset = generate_dataset(BANDIT2GOAL, 10_000, NoiseSource(0))
        np.testing.assert_allclose(dataset.actions.mean(axis=0), 0.0, atol=0.05)
        assert np.all(dataset.dones == 1.0)

    def test_reach_actions_are_bimodal(self):
        """Near the start the logged actions split into two well separated clusters."""
        dataset = generate_dataset(REACH2GOAL, 20_000, NoiseSource(3))
        near_start = np.linalg.norm(dataset.observations, axis=1) < 0.15
        actions = dataset.actions[near_start]
        centroids, labels = kmeans2(actions, np.array([[0.05, 0.0], [-0.05, 0.0]]), minit="matrix")
        shares = np.bincount(labels, minlength=2) / labels.size
        assert shares.min() > 0.3
        within = np.mean(np.sum((actions - centroids[labels]) ** 2, axis=1))
        total = np.mean(np.sum((actions - actions.mean(axis=0)) ** 2, axis=1))
        assert within < 0.3 * total
        assert np.linalg.norm(centroids[0] - centroids[1]) > 0.2
        assert np.sign(centroids[0].sum()) != np.sign(centroids[1].sum())

    def test_reproducible(self):
        assert generate_dataset(REACH2GOAL, 50, NoiseSource(9)) == generate_dataset(REACH2GOAL, 50, NoiseSource(9))

    def test_rows_follow_the_dynamics(self, reach_dataset):
        """Every stored transition is what env_step returns for its (x, a)."""
        for transition in reach_dataset:
            x_next, reward, done = env_step(REACH2GOAL, transition.x, transition.a)
            np.testing.assert_array_equal(x_next, transition.x_next)
            assert (reward, done) == (transition.r, transition.done)


class TestDatasetType:
    def test_sample_with_replacement(self, bandit_dataset):
        batch = bandit_dataset.sample(200, NoiseSource(0))
        assert len(batch) == 200

    def test_rejects_bad_done_flags(self):
        with pytest.raises(PreconditionError):
            Dataset("bandit2goal", np.zeros((1, 2)), np.zeros((1, 2)), [0.0], np.zeros((1, 2)), [0.5])

    def test_indexing(self, bandit_dataset):
        first = bandit_dataset[0]
        np.testing.assert_array_equal(first.a, bandit_dataset.actions[0])
        assert len(bandit_dataset.transitions()) == len(bandit_dataset)


class TestDatasetFiles:
    """Test suite for the text dataset format."""

    def test_round_trip(self, tmp_path):
        dataset = generate_dataset(REACH2GOAL, 100, NoiseSource(1))
        path = tmp_path / "nested" / "reach.txt"
        save_dataset(dataset, path)
        assert load_dataset(path, expected_env=REACH2GOAL) == dataset

    def test_header_then_rows(self, bandit_dataset):
        """A file is the header line followed by one row per transition."""
        lines = format_dataset(bandit_dataset).splitlines()
        assert lines[0] == "# sorl-dataset v1 obs_dim=2 action_dim=2 env=bandit2goal"
        assert len(lines) == len(bandit_dataset) + 1
        assert not lines[-1].startswith("#")

    def test_header_plus_rows_loads(self):
        text = (
            "# sorl-dataset v1 obs_dim=2 action_dim=2 env=bandit2goal\n"
            "0.0,0.0,0.5,0.5,1.0,0.0,0.0,1\n"
            "0.0,0.0,-0.5,-0.5,0.5,0.0,0.0,1\n"
            "0.0,0.0,0.1,0.2,0.0,0.0,0.0,1\n"
        )
        dataset = parse_dataset(text)
        assert len(dataset) == 3
        np.testing.assert_array_equal(dataset.rewards, [1.0, 0.5, 0.0])

    def test_footer_is_accepted(self, bandit_dataset):
        text = format_dataset(bandit_dataset) + f"# end transitions={len(bandit_dataset)}\n"
        assert parse_dataset(text) == bandit_dataset

    def test_footer_count_mismatch(self, bandit_dataset):
        text = format_dataset(bandit_dataset) + f"# end transitions={len(bandit_dataset) + 1}\n"
        with pytest.raises(DatasetFormatError, match="footer"):
            parse_dataset(text)

    def test_truncated_file(self, bandit_dataset):
        """A file cut inside its last row is rejected."""
        lines = format_dataset(bandit_dataset).splitlines()
        lines[-1] = lines[-1][: len(lines[-1]) // 2]
        with pytest.raises(DatasetFormatError, match="columns"):
            parse_dataset("\n".join(lines))

    def test_wrong_header_dimensions(self, bandit_dataset):
        text = format_dataset(bandit_dataset).replace("obs_dim=2 action_dim=2", "obs_dim=3 action_dim=2", 1)
        with pytest.raises(DatasetFormatError, match="do not match"):
            parse_dataset(text)

    def test_wrong_column_count(self, bandit_dataset):
        lines = format_dataset(bandit_dataset).splitlines()
        lines[1] = lines[1] + ",0.0"
        with pytest.raises(DatasetFormatError, match="columns"):
            parse_dataset("\n".join(lines))

    def test_malformed_header(self):
        with pytest.raises(DatasetFormatError):
            parse_dataset("hello\n0.0,0.0,0.5,0.5,1.0,0.0,0.0,1\n")

    def test_non_numeric_value(self, bandit_dataset):
        lines = format_dataset(bandit_dataset).splitlines()
        parts = lines[1].split(",")
        parts[0] = "abc"
        lines[1] = ",".join(parts)
        with pytest.raises(DatasetFormatError):
            parse_dataset("\n".join(lines))

    def test_environment_mismatch_on_load(self, dataset_file):
        spec = dataclasses.replace(REACH2GOAL, obs_dim=3)
        with pytest.raises(DatasetFormatError):
            load_dataset(dataset_file, expected_env=spec)
