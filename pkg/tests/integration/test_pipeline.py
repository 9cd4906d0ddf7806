# File: tests/integration/test_pipeline.py
"""Integration tests for the complete data -> train -> evaluate workflow."""
from pathlib import Path

import numpy as np
import pytest

from src.cli import EXIT_OK, SorlCLI, run
from src.config import InferenceConfig, TrainConfig
from src.envworld import BANDIT2GOAL, REACH2GOAL, Dataset, Transition, generate_dataset, optimal_reward
from src.noise import NoiseSource
from src.scale import evaluate, make_eval_hook, scaling_sweep
from src.sorl import DATASET_STEP_CODE, TrainState, final_average, train


def write_config(path: Path, dataset: Path, output_dir: Path, seed: int = 0) -> Path:
    path.write_text(
        f"env = reach2goal\n"
        f"dataset_path = {dataset}\n"
        f"output_dir = {output_dir}\n"
        "m_disc = 4\nm_btt = 2\nm_inf = 2\nbatch_size = 32\ngrad_steps = 6\n"
        "eval_every = 3\nepisodes = 2\npolicy_hidden = 16\ncritic_hidden = 16\n"
        f"log_every = 1\nseed = {seed}\n",
        encoding="utf-8",
    )
    return path


class TestPipelineIntegration:
    """Integration tests for full command workflows."""

    @pytest.mark.integration
    def test_gen_train_sweep(self, tmp_path: Path):
        """Every command reads what the previous one wrote."""
        data = tmp_path / "reach.txt"
        assert run(["gen-data", "--env", "reach2goal", "--n", "300", "--seed", "1", "--out", str(data)]) == EXIT_OK
        config = write_config(tmp_path / "run.txt", data, tmp_path / "run")
        assert run(["train", str(config)]) == EXIT_OK

        model = tmp_path / "run" / "model.txt"
        sweep = tmp_path / "sweep.csv"
        code = run(["sweep", "--model", str(model), "--env", "reach2goal", "--m-inf", "1,4", "--n", "1,2", "--episodes", "2", "--out", str(sweep)])
        assert code == EXIT_OK
        assert len(sweep.read_text().splitlines()) == 5

    @pytest.mark.integration
    @pytest.mark.asyncio
    async def test_training_is_deterministic(self, tmp_path: Path):
        """Two runs with the same seed write byte-identical metrics."""
        data = tmp_path / "reach.txt"
        cli = SorlCLI()
        await cli.cmd_gen_data("reach2goal", 200, 0, data)
        for name in ("a", "b"):
            await cli.cmd_train(write_config(tmp_path / f"{name}.txt", data, tmp_path / name))
        first = (tmp_path / "a" / "metrics.csv").read_bytes()
        assert first == (tmp_path / "b" / "metrics.csv").read_bytes()
        assert len(first.splitlines()) == 1 + 1 + 6

    @pytest.mark.integration
    @pytest.mark.asyncio
    async def test_seed_changes_metrics(self, tmp_path: Path):
        data = tmp_path / "reach.txt"
        cli = SorlCLI()
        await cli.cmd_gen_data("reach2goal", 200, 0, data)
        await cli.cmd_train(write_config(tmp_path / "a.txt", data, tmp_path / "a", seed=0))
        await cli.cmd_train(write_config(tmp_path / "b.txt", data, tmp_path / "b", seed=1))
        assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()


class TestLearning:
    """Training-based checks; deselected by default."""

    @pytest.mark.slow
    @pytest.mark.integration
    def test_bandit_finds_the_dominant_mode(self):
        """The Q-loss pulls the policy to the higher-reward goal."""
        dataset = generate_dataset(BANDIT2GOAL, 2000, NoiseSource(0))
        config = TrainConfig(alpha_q=50.0, grad_steps=5000, lr=3e-4, batch_size=128, policy_hidden=(32, 32), critic_hidden=(32, 32), log_every=500)
        hook = make_eval_hook(BANDIT2GOAL, InferenceConfig(m_inf=8, episodes=50))
        result = train(config, dataset, hook, eval_every=1000)
        final_return, _ = final_average(result.metrics)
        assert final_return >= 0.9 * optimal_reward(BANDIT2GOAL)

    @pytest.mark.slow
    @pytest.mark.integration
    def test_critic_reaches_geometric_return(self):
        """A rewarded self-loop with gamma = 0.9 is worth 1 / (1 - 0.9)."""
        x = np.zeros(2)
        transitions = [Transition(x, np.array([0.1, 0.1]), 1.0, x, False)] * 16
        dataset = Dataset.from_transitions("bandit2goal", transitions)
        config = TrainConfig(alpha_q=0.0, gamma=0.9, tau=0.05, lr=3e-3, grad_steps=10_000, batch_size=16, m_disc=4, m_btt=4, policy_hidden=(8,), critic_hidden=(32,), log_every=1000)
        result = train(config, dataset)
        q = result.state.critic.score(x.reshape(1, 2), np.array([[0.1, 0.1]]), DATASET_STEP_CODE)
        assert q[0] == pytest.approx(10.0, abs=0.5)

    @pytest.mark.slow
    @pytest.mark.integration
    def test_best_of_n_does_not_hurt(self):
        dataset = generate_dataset(BANDIT2GOAL, 1000, NoiseSource(2))
        config = TrainConfig(alpha_q=10.0, grad_steps=1500, lr=3e-4, batch_size=64, policy_hidden=(32,), critic_hidden=(32,), log_every=500)
        state = train(config, dataset).state
        single = evaluate(state.policy, state.critic, BANDIT2GOAL, InferenceConfig(m_inf=8, n=1, episodes=100))
        wide = evaluate(state.policy, state.critic, BANDIT2GOAL, InferenceConfig(m_inf=8, n=16, episodes=100))
        assert wide.mean_return >= single.mean_return - 2 * max(single.stderr, wide.stderr)


REACH_SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def reach_states() -> dict[tuple[str, int], TrainState]:
    """SORL and its alpha_q=0 ablation on reach2goal, three seeds each, with default settings."""
    dataset = generate_dataset(REACH2GOAL, 100_000, NoiseSource(0))
    states = {}
    for seed in REACH_SEEDS:
        for name, alpha_q in (("sorl", 50.0), ("bc", 0.0)):
            config = TrainConfig(alpha_q=alpha_q, grad_steps=50_000, seed=seed, log_every=5000)
            states[name, seed] = train(config, dataset).state
    return states


class TestReachToGoal:
    """End-to-end offline RL on the two-goal reaching task; deselected by default."""

    @pytest.mark.slow
    @pytest.mark.integration
    def test_sorl_beats_behavior_cloning(self, reach_states):
        """The Q-loss lifts success well above the half-and-half behavior data."""

        def success(name: str) -> float:
            rates = [
                evaluate(
                    reach_states[name, seed].policy,
                    reach_states[name, seed].critic,
                    REACH2GOAL,
                    InferenceConfig(m_inf=4, episodes=50, seed=seed),
                ).success_rate
                for seed in REACH_SEEDS
            ]
            return float(np.mean(rates))

        assert success("sorl") >= 0.8
        assert success("bc") <= 0.65

    @pytest.mark.slow
    @pytest.mark.integration
    def test_more_steps_do_not_hurt(self, reach_states):
        """Four Euler steps score at least one step's return, within a pooled standard error."""
        state = reach_states["sorl", 0]
        rows = scaling_sweep(state.policy, state.critic, REACH2GOAL, [1, 4], [1], episodes=50, seed=0)
        one, four = rows
        assert (one.m_inf, four.m_inf) == (1, 4)
        pooled = float(np.hypot(one.stderr, four.stderr))
        assert four.mean_return >= one.mean_return - pooled
