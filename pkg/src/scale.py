"""
Inference-time scaling and episode evaluation.

Sequential scaling varies the Euler step budget m_inf; parallel scaling draws
N candidate actions per decision and keeps the one the verifier scores
highest. Candidate noise comes from a substream per (episode, timestep) and
is drawn in fixed blocks, so the first k candidates never depend on N.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Protocol, Sequence

import numpy as np

from .config import InferenceConfig
from .envworld import EnvSpec, env_reset, env_step, is_success
from .errors import PreconditionError
from .noise import NoiseSource
from .shortcut import ShortcutPolicy, clip_action, euler_sample
from .sorl import EVAL_STREAM, EvalHook, StepCode, TrainState
from .utils import is_power_of_two, standard_error

logger = logging.getLogger(__name__)

CANDIDATE_BLOCK = 8


class Verifier(Protocol):
    def score(self, x: np.ndarray, actions: np.ndarray, code: float) -> np.ndarray:
        """One score per action row."""
        ...


class Selection(NamedTuple):
    action: np.ndarray
    index: int
    candidates: np.ndarray
    scores: np.ndarray


def _check_budget(m_inf: int, policy: ShortcutPolicy) -> None:
    if not is_power_of_two(m_inf) or m_inf > policy.m_disc:
        raise PreconditionError(f"m_inf must be a power of two <= {policy.m_disc}, got {m_inf}")


def draw_candidates(policy: ShortcutPolicy, x: np.ndarray, m_inf: int, n: int, rng: NoiseSource) -> np.ndarray:
    """n candidate actions for one observation, computed block by block."""
    if n < 1:
        raise PreconditionError("need at least one candidate")
    _check_budget(m_inf, policy)
    xs = np.broadcast_to(np.asarray(x, dtype=np.float64).reshape(1, -1), (CANDIDATE_BLOCK, policy.obs_dim))
    blocks = []
    for block in range(math.ceil(n / CANDIDATE_BLOCK)):
        noise = rng.spawn(block).normal((CANDIDATE_BLOCK, policy.action_dim))
        blocks.append(euler_sample(policy, xs, m_inf, noise=noise).data)
    return np.concatenate(blocks)[:n]


def score_actions(verifier: Verifier, x: np.ndarray, actions: np.ndarray, code: float) -> np.ndarray:
    """Verifier scores, evaluated in the same fixed blocks as the candidates."""
    obs = np.asarray(x, dtype=np.float64).reshape(1, -1)
    scores = []
    for start in range(0, actions.shape[0], CANDIDATE_BLOCK):
        chunk = actions[start : start + CANDIDATE_BLOCK]
        padded = np.zeros((CANDIDATE_BLOCK, actions.shape[1]))
        padded[: chunk.shape[0]] = chunk
        block_scores = verifier.score(np.repeat(obs, CANDIDATE_BLOCK, axis=0), padded, code)
        scores.append(np.asarray(block_scores)[: chunk.shape[0]])
    return np.concatenate(scores)


def select_best(candidates: np.ndarray, scores: np.ndarray) -> tuple[int, np.ndarray]:
    """Argmax; ties go to the lowest index."""
    scores = np.asarray(scores)
    if scores.shape[0] != candidates.shape[0] or scores.shape[0] == 0:
        raise PreconditionError("need one score per candidate")
    index = int(np.argmax(scores))
    return index, candidates[index]


def select_candidate(
    policy: ShortcutPolicy, verifier: Verifier, x: np.ndarray, config: InferenceConfig, rng: NoiseSource
) -> Selection:
    candidates = draw_candidates(policy, x, config.m_inf, config.n, rng)
    if config.n == 1:
        return Selection(candidates[0], 0, candidates, np.zeros(1))
    scores = score_actions(verifier, x, candidates, StepCode(config.m_inf, policy.m_disc).encoding)
    index, action = select_best(candidates, scores)
    return Selection(action, index, candidates, scores)


def best_of_n(
    policy: ShortcutPolicy, verifier: Verifier, x: np.ndarray, config: InferenceConfig, rng: NoiseSource
) -> np.ndarray:
    """The highest-scoring of N sampled actions (unclipped)."""
    return select_candidate(policy, verifier, x, config, rng).action


@dataclass
class EpisodeRecord:
    episode: int
    total_return: float
    success: bool
    length: int

    COLUMNS = ("episode", "return", "success", "length")

    def values(self) -> list[object]:
        return [self.episode, self.total_return, self.success, self.length]


@dataclass
class EvaluationResult:
    mean_return: float
    success_rate: float
    stderr: float
    episodes: list[EpisodeRecord]


def evaluate(
    policy: ShortcutPolicy, verifier: Verifier, spec: EnvSpec, config: InferenceConfig
) -> EvaluationResult:
    """Roll out `config.episodes` episodes, re-ranking candidates at every decision."""
    if config.episodes < 1:
        raise PreconditionError("episodes must be >= 1")
    _check_budget(config.m_inf, policy)
    if (policy.obs_dim, policy.action_dim) != (spec.obs_dim, spec.action_dim):
        raise PreconditionError(f"policy dimensions do not match environment {spec.name}")
    rng = NoiseSource(config.seed).spawn(EVAL_STREAM)
    records: list[EpisodeRecord] = []
    for episode in range(config.episodes):
        episode_rng = rng.spawn(episode)
        x = env_reset(spec, episode_rng.spawn(0))
        rewards: list[float] = []
        for t in range(spec.horizon):
            action = best_of_n(policy, verifier, x, config, episode_rng.spawn(1, t))
            x, reward, done = env_step(spec, x, clip_action(action, spec.action_bound))
            rewards.append(reward)
            if done:
                break
        records.append(EpisodeRecord(episode, float(sum(rewards)), is_success(spec, rewards), len(rewards)))
    returns = [record.total_return for record in records]
    result = EvaluationResult(
        mean_return=float(np.mean(returns)),
        success_rate=float(np.mean([record.success for record in records])),
        stderr=standard_error(returns),
        episodes=records,
    )
    logger.info(
        f"{spec.name} m_inf={config.m_inf} n={config.n}: return {result.mean_return:.4f} "
        f"success {result.success_rate:.3f} over {config.episodes} episodes"
    )
    return result


def make_eval_hook(spec: EnvSpec, config: InferenceConfig) -> EvalHook:
    """Evaluation callback for train(): (mean return, success rate) of the current networks."""

    def hook(state: TrainState) -> tuple[float, float]:
        result = evaluate(state.policy, state.critic, spec, config)
        return result.mean_return, result.success_rate

    return hook


@dataclass
class SweepRow:
    m_inf: int
    n: int
    mean_return: float
    success_rate: float
    stderr: float
    episodes: int

    COLUMNS = ("m_inf", "n", "mean_return", "success_rate", "stderr", "episodes")

    def values(self) -> list[object]:
        return [self.m_inf, self.n, self.mean_return, self.success_rate, self.stderr, self.episodes]


def scaling_sweep(
    policy: ShortcutPolicy,
    verifier: Verifier,
    spec: EnvSpec,
    m_inf_list: Sequence[int],
    n_list: Sequence[int],
    episodes: int,
    seed: int,
) -> list[SweepRow]:
    """One evaluation per (m_inf, n) cell, m_inf-major."""
    for m_inf in m_inf_list:
        _check_budget(m_inf, policy)
    if any(n < 1 for n in n_list):
        raise PreconditionError("every N must be >= 1")
    rows = []
    for m_inf in m_inf_list:
        for n in n_list:
            config = InferenceConfig(m_inf=m_inf, n=n, episodes=episodes, seed=seed)
            result = evaluate(policy, verifier, spec, config)
            rows.append(SweepRow(m_inf, n, result.mean_return, result.success_rate, result.stderr, episodes))
    return rows
