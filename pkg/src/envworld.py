"""
Desk-scale environments, scripted behavior policies and offline datasets.

Two tasks are registered: `bandit2goal`, a one-step bandit with two reward
modes, and `reach2goal`, a point mass whose scripted controller heads for the
rewarded goal or a decoy with equal probability. Datasets persist as plain
text with a fixed header and a transition-count footer.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ActionBoundError, DatasetFormatError, PreconditionError, UnknownEnvironmentError
from .noise import NoiseSource
from .utils import ensure_directory, format_row

logger = logging.getLogger(__name__)

DATASET_HEADER = "# sorl-dataset v1 obs_dim={obs_dim} action_dim={action_dim} env={env}"
_HEADER_RE = re.compile(r"^# sorl-dataset v1 obs_dim=(\d+) action_dim=(\d+) env=(\S+)$")
_FOOTER_RE = re.compile(r"^# end transitions=(\d+)$")


@dataclass(frozen=True)
class EnvSpec:
    """
    Static description of one task.

    `width` is the reward bandwidth for the bandit and the goal radius for
    the point mass. An episode counts as a success once any reward exceeds
    `success_threshold`.
    """

    name: str
    obs_dim: int
    action_dim: int
    action_bound: float
    horizon: int
    gamma: float
    goal: tuple[float, ...]
    decoy: tuple[float, ...]
    width: float
    decoy_weight: float
    start_range: float
    behavior_std: float
    behavior_speed: float
    success_threshold: float

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise PreconditionError(f"{self.name}: horizon must be >= 1")
        if self.action_bound <= 0:
            raise PreconditionError(f"{self.name}: action_bound must be positive")


BANDIT2GOAL = EnvSpec(
    name="bandit2goal",
    obs_dim=2,
    action_dim=2,
    action_bound=1.0,
    horizon=1,
    gamma=0.99,
    goal=(0.6, 0.6),
    decoy=(-0.6, -0.6),
    width=0.15,
    decoy_weight=0.5,
    start_range=0.0,
    behavior_std=0.2,
    behavior_speed=0.0,
    success_threshold=0.75,
)

REACH2GOAL = EnvSpec(
    name="reach2goal",
    obs_dim=2,
    action_dim=2,
    action_bound=0.2,
    horizon=50,
    gamma=0.99,
    goal=(0.7, 0.7),
    decoy=(-0.7, -0.7),
    width=0.1,
    decoy_weight=0.0,
    start_range=0.1,
    behavior_std=0.05,
    behavior_speed=0.15,
    success_threshold=0.5,
)

ENVIRONMENTS: dict[str, EnvSpec] = {spec.name: spec for spec in (BANDIT2GOAL, REACH2GOAL)}


def get_env_spec(name: str) -> EnvSpec:
    try:
        return ENVIRONMENTS[name]
    except KeyError:
        raise UnknownEnvironmentError(name, sorted(ENVIRONMENTS)) from None


class StepResult(NamedTuple):
    x_next: np.ndarray
    reward: float
    done: bool


def env_reset(spec: EnvSpec, rng: NoiseSource) -> np.ndarray:
    """Draw a start state."""
    if spec.start_range == 0.0:
        return np.zeros(spec.obs_dim)
    return rng.uniform(spec.obs_dim, -spec.start_range, spec.start_range)


def bandit_reward(spec: EnvSpec, a: np.ndarray) -> float:
    two_var = 2.0 * spec.width**2
    near = np.exp(-np.sum((a - np.asarray(spec.goal)) ** 2) / two_var)
    far = np.exp(-np.sum((a - np.asarray(spec.decoy)) ** 2) / two_var)
    return float(near + spec.decoy_weight * far)


def env_step(spec: EnvSpec, x: np.ndarray, a: np.ndarray) -> StepResult:
    """Pure transition function."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (spec.action_dim,):
        raise PreconditionError(f"{spec.name}: expected action of shape ({spec.action_dim},), got {a.shape}")
    if np.any(np.abs(a) > spec.action_bound):
        raise ActionBoundError(f"{spec.name}: action {a.tolist()} outside [-{spec.action_bound}, {spec.action_bound}]")
    if spec.horizon == 1:
        return StepResult(x.copy(), bandit_reward(spec, a), True)
    x_next = np.clip(x + a, -1.0, 1.0)
    if np.linalg.norm(x_next - np.asarray(spec.goal)) < spec.width:
        return StepResult(x_next, 1.0, True)
    return StepResult(x_next, 0.0, False)


def is_success(spec: EnvSpec, rewards: Sequence[float]) -> bool:
    return any(r > spec.success_threshold for r in rewards)


class BehaviorPolicy:
    """The scripted data-generating controller; the mode is fixed per episode."""

    def __init__(self, spec: EnvSpec, rng: NoiseSource):
        self.spec = spec
        self.rng = rng
        self.target = np.asarray(spec.goal if rng.uniform(1)[0] < 0.5 else spec.decoy)

    def act(self, x: np.ndarray) -> np.ndarray:
        spec = self.spec
        if spec.horizon == 1:
            a = self.target + self.rng.normal(spec.action_dim, scale=spec.behavior_std)
        else:
            direction = self.target - x
            norm = np.linalg.norm(direction)
            unit = direction / norm if norm > 0 else np.zeros_like(direction)
            a = spec.behavior_speed * unit + self.rng.normal(spec.action_dim, scale=spec.behavior_std)
        return np.clip(a, -spec.action_bound, spec.action_bound)


@dataclass
class Transition:
    x: np.ndarray
    a: np.ndarray
    r: float
    x_next: np.ndarray
    done: bool


@dataclass
class Batch:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return self.rewards.shape[0]


class Dataset:
    """Offline transitions stored column-wise."""

    def __init__(
        self,
        env_name: str,
        observations: np.ndarray,
        actions: np.ndarray,
        rewards: np.ndarray,
        next_observations: np.ndarray,
        dones: np.ndarray,
    ):
        self.env_name = env_name
        self.observations = np.asarray(observations, dtype=np.float64)
        self.actions = np.asarray(actions, dtype=np.float64)
        self.rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
        self.next_observations = np.asarray(next_observations, dtype=np.float64)
        self.dones = np.asarray(dones, dtype=np.float64).reshape(-1)
        self._validate()

    def _validate(self) -> None:
        n = self.rewards.shape[0]
        if n == 0:
            raise PreconditionError("a dataset needs at least one transition")
        if self.observations.ndim != 2 or self.actions.ndim != 2:
            raise PreconditionError("observations and actions must be 2-D")
        if self.observations.shape[0] != n or self.actions.shape[0] != n or self.dones.shape[0] != n:
            raise PreconditionError("dataset columns have different lengths")
        if self.next_observations.shape != self.observations.shape:
            raise PreconditionError("next_observations must match observations")
        if not np.all(np.isfinite(self.rewards)):
            raise PreconditionError("rewards must be finite")
        if not np.all((self.dones == 0.0) | (self.dones == 1.0)):
            raise PreconditionError("done flags must be 0 or 1")

    @classmethod
    def from_transitions(cls, env_name: str, transitions: Sequence[Transition]) -> "Dataset":
        if not transitions:
            raise PreconditionError("a dataset needs at least one transition")
        return cls(
            env_name,
            np.stack([t.x for t in transitions]),
            np.stack([t.a for t in transitions]),
            np.array([t.r for t in transitions]),
            np.stack([t.x_next for t in transitions]),
            np.array([float(t.done) for t in transitions]),
        )

    @property
    def obs_dim(self) -> int:
        return self.observations.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def __len__(self) -> int:
        return self.rewards.shape[0]

    def __getitem__(self, index: int) -> Transition:
        return Transition(
            self.observations[index].copy(),
            self.actions[index].copy(),
            float(self.rewards[index]),
            self.next_observations[index].copy(),
            bool(self.dones[index]),
        )

    def __iter__(self) -> Iterator[Transition]:
        return (self[i] for i in range(len(self)))

    def transitions(self) -> list[Transition]:
        return list(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.env_name == other.env_name and all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("observations", "actions", "rewards", "next_observations", "dones")
        )

    def sample(self, batch_size: int, rng: NoiseSource) -> Batch:
        """Uniform minibatch, with replacement."""
        if batch_size < 1:
            raise PreconditionError("batch_size must be >= 1")
        idx = rng.integers(0, len(self), batch_size)
        return Batch(
            self.observations[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_observations[idx],
            self.dones[idx],
        )

    def as_batch(self) -> Batch:
        return Batch(self.observations, self.actions, self.rewards, self.next_observations, self.dones)


def generate_dataset(spec: EnvSpec, n_transitions: int, rng: NoiseSource) -> Dataset:
    """Roll out the scripted behavior policy until n_transitions are recorded."""
    if n_transitions < 1:
        raise PreconditionError("n_transitions must be >= 1")
    transitions: list[Transition] = []
    episode = 0
    while len(transitions) < n_transitions:
        episode_rng = rng.spawn(episode)
        behavior = BehaviorPolicy(spec, episode_rng.spawn(0))
        x = env_reset(spec, episode_rng.spawn(1))
        for _ in range(spec.horizon):
            a = behavior.act(x)
            x_next, reward, done = env_step(spec, x, a)
            transitions.append(Transition(x, a, reward, x_next, done))
            x = x_next
            if done or len(transitions) >= n_transitions:
                break
        episode += 1
    logger.info(f"generated {len(transitions)} {spec.name} transitions over {episode} episodes")
    return Dataset.from_transitions(spec.name, transitions)


def behavior_success_rate(spec: EnvSpec, episodes: int, rng: NoiseSource) -> float:
    """Online success rate of the scripted behavior policy."""
    if episodes < 1:
        raise PreconditionError("episodes must be >= 1")
    successes = 0
    for episode in range(episodes):
        episode_rng = rng.spawn(episode)
        behavior = BehaviorPolicy(spec, episode_rng.spawn(0))
        x = env_reset(spec, episode_rng.spawn(1))
        rewards = []
        for _ in range(spec.horizon):
            x, reward, done = env_step(spec, x, behavior.act(x))
            rewards.append(reward)
            if done:
                break
        successes += is_success(spec, rewards)
    return successes / episodes


def optimal_reward(spec: EnvSpec, resolution: int = 401) -> float:
    """Best achievable episode reward; grid search then local refinement for the bandit."""
    if spec.horizon > 1:
        return 1.0
    bound = spec.action_bound
    axis = np.linspace(-bound, bound, resolution)
    grid = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, spec.action_dim)
    values = np.array([bandit_reward(spec, a) for a in grid])
    start = grid[int(np.argmax(values))]
    result = minimize(
        lambda a: -bandit_reward(spec, a),
        start,
        method="L-BFGS-B",
        bounds=[(-bound, bound)] * spec.action_dim,
        options={"ftol": 1e-15, "gtol": 1e-12},
    )
    return max(float(values.max()), -float(result.fun))


def format_dataset(dataset: Dataset) -> str:
    lines = [DATASET_HEADER.format(obs_dim=dataset.obs_dim, action_dim=dataset.action_dim, env=dataset.env_name)]
    for i in range(len(dataset)):
        lines.append(
            format_row(
                [
                    *dataset.observations[i].tolist(),
                    *dataset.actions[i].tolist(),
                    float(dataset.rewards[i]),
                    *dataset.next_observations[i].tolist(),
                    bool(dataset.dones[i]),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def parse_dataset(text: str, source: str = "<string>") -> Dataset:
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError(f"{source}: empty dataset file")
    header = _HEADER_RE.match(lines[0])
    if header is None:
        raise DatasetFormatError(f"{source}: malformed header {lines[0]!r}")
    obs_dim, action_dim, env_name = int(header.group(1)), int(header.group(2)), header.group(3)
    if env_name in ENVIRONMENTS:
        spec = ENVIRONMENTS[env_name]
        if (spec.obs_dim, spec.action_dim) != (obs_dim, action_dim):
            raise DatasetFormatError(
                f"{source}: header dimensions ({obs_dim}, {action_dim}) do not match {env_name} "
                f"({spec.obs_dim}, {spec.action_dim})"
            )
    body = lines[1:]
    # optional trailer, checked against the row count when present
    footer = _FOOTER_RE.match(body[-1]) if body else None
    if footer is not None:
        body = body[:-1]
        if int(footer.group(1)) != len(body):
            raise DatasetFormatError(f"{source}: footer announces {footer.group(1)} transitions, found {len(body)}")
    columns = 2 * obs_dim + action_dim + 2
    rows = np.empty((len(body), columns))
    for number, line in enumerate(body, start=2):
        parts = line.split(",")
        if len(parts) != columns:
            raise DatasetFormatError(f"{source}:{number}: expected {columns} columns, got {len(parts)}")
        if parts[-1] not in ("0", "1"):
            raise DatasetFormatError(f"{source}:{number}: done flag must be 0 or 1, got {parts[-1]!r}")
        try:
            rows[number - 2] = [float(p) for p in parts]
        except ValueError as e:
            raise DatasetFormatError(f"{source}:{number}: {e}") from e
    o, a = obs_dim, action_dim
    try:
        return Dataset(
            env_name,
            rows[:, :o],
            rows[:, o : o + a],
            rows[:, o + a],
            rows[:, o + a + 1 : 2 * o + a + 1],
            rows[:, -1],
        )
    except PreconditionError as e:
        raise DatasetFormatError(f"{source}: {e}") from e


def save_dataset(dataset: Dataset, path: Path) -> None:
    path = Path(path)
    ensure_directory(path)
    path.write_text(format_dataset(dataset), encoding="utf-8")


def load_dataset(path: Path, expected_env: Optional[EnvSpec] = None) -> Dataset:
    path = Path(path)
    dataset = parse_dataset(path.read_text(encoding="utf-8"), source=str(path))
    if expected_env is not None and (dataset.obs_dim, dataset.action_dim) != (
        expected_env.obs_dim,
        expected_env.action_dim,
    ):
        raise DatasetFormatError(f"{path}: dataset dimensions do not match environment {expected_env.name}")
    return dataset
