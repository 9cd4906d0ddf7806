# File: tests/conftest.py
"""Shared test fixtures and utilities for sorl-desk tests."""
from pathlib import Path

import numpy as np
import pytest

from src.config import RunConfig, TrainConfig
from src.diffcore import MlpSpec, ParamStore, init_mlp
from src.envworld import BANDIT2GOAL, REACH2GOAL, Dataset, generate_dataset, save_dataset
from src.noise import NoiseSource
from src.shortcut import ShortcutPolicy
from src.sorl import Critic, TrainState
from src.themes import Theme, get_theme


@pytest.fixture
def rng() -> NoiseSource:
    """A fresh seeded stream per test."""
    return NoiseSource(1234)


@pytest.fixture
def small_train_config() -> TrainConfig:
    """Tiny networks and batches so training tests stay fast."""
    return TrainConfig(
        m_disc=4,
        m_btt=4,
        batch_size=16,
        grad_steps=5,
        policy_hidden=(8,),
        critic_hidden=(8,),
        log_every=1,
        seed=3,
    )


@pytest.fixture
def small_policy(rng: NoiseSource) -> ShortcutPolicy:
    """A 2-d action, 2-d observation shortcut policy with M_disc = 8."""
    return ShortcutPolicy.create(2, 2, 8, (8,), rng.spawn(0))


@pytest.fixture
def small_critic(rng: NoiseSource) -> Critic:
    return Critic.create(2, 2, (8,), rng.spawn(1))


@pytest.fixture
def bandit_dataset() -> Dataset:
    return generate_dataset(BANDIT2GOAL, 64, NoiseSource(7))


@pytest.fixture
def reach_dataset() -> Dataset:
    return generate_dataset(REACH2GOAL, 120, NoiseSource(7))


@pytest.fixture
def train_state(small_train_config: TrainConfig) -> TrainState:
    return TrainState.create(2, 2, small_train_config)


@pytest.fixture
def dataset_file(tmp_path: Path, bandit_dataset: Dataset) -> Path:
    """The bandit dataset written to disk."""
    path = tmp_path / "data" / "bandit.txt"
    save_dataset(bandit_dataset, path)
    return path


@pytest.fixture
def run_config_file(tmp_path: Path, dataset_file: Path) -> Path:
    """A minimal `key = value` run configuration for the bandit."""
    path = tmp_path / "run.txt"
    path.write_text(
        "\n".join(
            [
                "env = bandit2goal",
                f"dataset_path = {dataset_file}",
                f"output_dir = {tmp_path / 'run'}",
                "m_disc = 4",
                "m_btt = 4",
                "m_inf = 2",
                "batch_size = 16",
                "grad_steps = 4",
                "eval_every = 2",
                "episodes = 3",
                "policy_hidden = 8",
                "critic_hidden = 8",
                "log_every = 2",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    return path


@pytest.fixture
def run_config(run_config_file: Path) -> RunConfig:
    return RunConfig(_env_file=run_config_file)


@pytest.fixture
def linear_mlp() -> tuple[MlpSpec, ParamStore]:
    """A single affine layer with hand-set weights."""
    spec = MlpSpec(2, 1, ())
    params = ParamStore({"layer0.weight": np.array([[1.0], [-2.0]]), "layer0.bias": np.array([0.5])})
    return spec, params


@pytest.fixture
def seeded_mlp(rng: NoiseSource) -> tuple[MlpSpec, ParamStore]:
    spec = MlpSpec(3, 2, (5, 4), use_layer_norm=True)
    return spec, ParamStore(init_mlp(spec, rng))


@pytest.fixture
def sample_theme() -> Theme:
    """The default theme."""
    return get_theme("desk")
