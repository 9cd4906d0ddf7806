"""
Actor-critic training with a shortcut policy.

One iteration samples a minibatch, regresses both critics onto a Bellman
target built from policy actions at the next state, then updates the policy
on a weighted sum of a normalized Q objective (differentiated through every
Euler step), flow matching and self-consistency. Target copies of the critics
and the policy follow by Polyak averaging.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from .config import TrainConfig
from .diffcore import (
    MlpSpec,
    Operand,
    ParamStore,
    Tensor,
    as_tensor,
    backward,
    clip_global_norm,
    adam_step,
    concat,
    init_mlp,
    minimum,
    mlp_forward,
)
from .envworld import Batch, Dataset
from .errors import NonFiniteError, PreconditionError, ShapeError
from .noise import NoiseSource
from .shortcut import ShortcutPolicy, euler_sample, flow_matching_loss, self_consistency_loss
from .utils import is_power_of_two, log2_exact, powers_of_two_up_to

logger = logging.getLogger(__name__)

Aggregation = Literal["mean", "min"]

# Spawn keys under the run seed.
INIT_STREAM = 0
TRAIN_STREAM = 1
EVAL_STREAM = 2

DATASET_STEP_CODE = 1.0
Q_NORM_EPS = 1e-6


@dataclass(frozen=True)
class StepCode:
    """Critic input telling how many Euler steps produced an action."""

    m: int
    m_disc: int

    def __post_init__(self) -> None:
        if not is_power_of_two(self.m) or not is_power_of_two(self.m_disc):
            raise PreconditionError(f"step counts must be powers of two, got m={self.m}, m_disc={self.m_disc}")

    @property
    def encoding(self) -> float:
        if self.m_disc == 1:
            return 1.0
        return min(log2_exact(self.m) / log2_exact(self.m_disc), 1.0)


def aggregate(values: tuple[Tensor, Tensor], mode: Aggregation) -> Tensor:
    q0, q1 = values
    if mode == "min":
        return minimum(q0, q1)
    return (q0 + q1) * 0.5


@dataclass
class Critic:
    """Two Q networks in one store (prefixes q0. and q1.) plus their target copy."""

    spec: MlpSpec
    online: ParamStore
    target: ParamStore
    obs_dim: int
    action_dim: int
    aggregation: Aggregation = "mean"

    def __post_init__(self) -> None:
        if self.spec.output_dim != 1 or self.spec.input_dim != self.obs_dim + self.action_dim + 1:
            raise ShapeError(f"critic spec {self.spec} does not fit obs_dim={self.obs_dim}, action_dim={self.action_dim}")
        for name in self.online:
            if name not in self.target or self.target[name].shape != self.online[name].shape:
                raise ShapeError(f"critic target does not match online network at {name}")

    @classmethod
    def create(
        cls,
        obs_dim: int,
        action_dim: int,
        hidden_dims: Sequence[int],
        rng: NoiseSource,
        aggregation: Aggregation = "mean",
    ) -> "Critic":
        spec = MlpSpec(obs_dim + action_dim + 1, 1, tuple(hidden_dims), use_layer_norm=True)
        arrays = {**init_mlp(spec, rng.spawn(0), prefix="q0."), **init_mlp(spec, rng.spawn(1), prefix="q1.")}
        online = ParamStore(arrays)
        return cls(spec, online, online.clone(trainable=False), obs_dim, action_dim, aggregation)

    def q_values(
        self, x: Operand, a: Operand, code: Operand, params: Optional[ParamStore] = None
    ) -> tuple[Tensor, Tensor]:
        """Both Q heads as [batch] tensors; `code` is a scalar or one value per row."""
        params = self.online if params is None else params
        a = as_tensor(a)
        batch = a.shape[0]
        code = np.asarray(as_tensor(code).data, dtype=np.float64)
        code = np.full((batch, 1), float(code)) if code.ndim == 0 else code.reshape(batch, 1)
        inputs = concat([as_tensor(x), a, code], axis=1)
        q0 = mlp_forward(params, self.spec, inputs, prefix="q0.")
        q1 = mlp_forward(params, self.spec, inputs, prefix="q1.")
        return q0.reshape(batch), q1.reshape(batch)

    def score(self, x: np.ndarray, actions: np.ndarray, code: float) -> np.ndarray:
        """Mean of the online heads, no graph; the verifier used for best-of-N."""
        q = aggregate(self.q_values(x, actions, code, self.online.detached()), "mean")
        return q.data.copy()


@dataclass
class LossBreakdown:
    q_loss: float = 0.0
    fm_loss: float = 0.0
    sc_loss: float = 0.0
    critic_loss: float = 0.0
    q_mean_abs: float = 0.0

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.q_loss, self.fm_loss, self.sc_loss, self.critic_loss, self.q_mean_abs))


@dataclass
class MetricsRow:
    """One line of metrics.csv; evaluation fields stay None off-cadence."""

    step: int
    q_loss: Optional[float] = None
    fm_loss: Optional[float] = None
    sc_loss: Optional[float] = None
    critic_loss: Optional[float] = None
    eval_return: Optional[float] = None
    success_rate: Optional[float] = None

    COLUMNS = ("step", "q_loss", "fm_loss", "sc_loss", "critic_loss", "eval_return", "success_rate")

    def values(self) -> list[Optional[float]]:
        return [getattr(self, column) for column in self.COLUMNS]

    @property
    def has_eval(self) -> bool:
        return self.eval_return is not None


@dataclass
class TrainState:
    """Every network of a run; the optimizer state lives inside the ParamStores."""

    policy: ShortcutPolicy
    target_policy: ShortcutPolicy
    critic: Critic
    step: int = 0

    @classmethod
    def create(cls, obs_dim: int, action_dim: int, config: TrainConfig) -> "TrainState":
        rng = NoiseSource(config.seed).spawn(INIT_STREAM)
        policy = ShortcutPolicy.create(obs_dim, action_dim, config.m_disc, config.policy_hidden, rng.spawn(0))
        critic = Critic.create(
            obs_dim,
            action_dim,
            config.critic_hidden,
            rng.spawn(1),
            aggregation="min" if config.clipped_double_q else "mean",
        )
        return cls(policy, policy.frozen_copy(), critic)


EvalHook = Callable[[TrainState], tuple[float, float]]


@dataclass
class TrainResult:
    state: TrainState
    metrics: list[MetricsRow]
    losses: list[LossBreakdown] = field(default_factory=list)


def sample_btt_steps(m_btt: int, rng: NoiseSource, size: Optional[int] = None) -> int | np.ndarray:
    """m uniform over {1, 2, 4, ..., m_btt}; an array of draws when size is given."""
    if not is_power_of_two(m_btt):
        raise PreconditionError(f"m_btt must be a power of two, got {m_btt}")
    draws = rng.choice(powers_of_two_up_to(m_btt), 1 if size is None else size)
    return int(draws[0]) if size is None else draws.astype(np.int64)


def _check_loss(loss: Tensor, name: str) -> None:
    if not np.all(np.isfinite(loss.data)):
        logger.error(f"{name} became non-finite")
        raise NonFiniteError(f"{name} is not finite")


def _policy_q_values(
    policy: ShortcutPolicy, critic: Critic, x: np.ndarray, steps: np.ndarray, rng: NoiseSource
) -> Tensor:
    """Mean-aggregated online Q at policy actions; rows come back grouped by step budget."""
    params = critic.online.detached()
    pieces: list[Tensor] = []
    for m in np.unique(steps):
        rows = np.flatnonzero(steps == m)
        actions = euler_sample(policy, x[rows], int(m), rng.spawn(int(m)))
        code = StepCode(int(m), policy.m_disc).encoding
        pieces.append(aggregate(critic.q_values(x[rows], actions, code, params), "mean"))
    return concat(pieces, axis=0)


def q_loss(
    policy: ShortcutPolicy, critic: Critic, x: np.ndarray, config: TrainConfig, rng: NoiseSource
) -> tuple[Tensor, float]:
    """
    Q objective on actions sampled with a per-row step budget.

    Returns the loss and mean |Q|. In normalized mode the loss is
    -mean(Q) / (mean|Q| + 1e-6) with the denominator held constant.
    """
    x = np.asarray(x, dtype=np.float64)
    steps = sample_btt_steps(config.m_btt, rng.spawn(0), x.shape[0])
    q = _policy_q_values(policy, critic, x, steps, rng.spawn(1))
    _check_loss(q, "q values")
    q_mean_abs = float(np.mean(np.abs(q.data)))
    loss = -q.mean()
    if config.q_normalization == "normalized":
        loss = loss * (1.0 / (q_mean_abs + Q_NORM_EPS))
    return loss, q_mean_abs


def critic_loss(policy: ShortcutPolicy, critic: Critic, batch: Batch, config: TrainConfig, rng: NoiseSource) -> Tensor:
    """Mean squared Bellman error of both online heads; the policy only supplies constants."""
    if len(batch) == 0:
        raise PreconditionError("critic_loss needs a non-empty batch")
    steps = sample_btt_steps(config.m_btt, rng.spawn(0), len(batch))
    next_q = np.empty(len(batch))
    for m in np.unique(steps):
        rows = np.flatnonzero(steps == m)
        next_actions = euler_sample(policy, batch.next_observations[rows], int(m), rng.spawn(1, int(m))).data
        code = StepCode(int(m), policy.m_disc).encoding
        heads = critic.q_values(batch.next_observations[rows], next_actions, code, critic.target)
        next_q[rows] = aggregate(heads, critic.aggregation).data
    y = batch.rewards + config.gamma * (1.0 - batch.dones) * next_q
    q0, q1 = critic.q_values(batch.observations, batch.actions, DATASET_STEP_CODE)
    return (((q0 - y) ** 2).mean() + ((q1 - y) ** 2).mean()) * 0.5


def fm_step_size(config: TrainConfig) -> float:
    return min(1.0, (1.0 if config.fm_step == "min" else 2.0) / config.m_disc)


def generative_loss(
    policy: ShortcutPolicy,
    target_policy: ShortcutPolicy,
    x: np.ndarray,
    a1: np.ndarray,
    config: TrainConfig,
    rng: NoiseSource,
) -> tuple[Tensor, float, float]:
    """alpha_bc * FM + alpha_sc * SC, with both component values."""
    fm = flow_matching_loss(policy, x, a1, rng.spawn(0), step_size=fm_step_size(config))
    total = fm * config.alpha_bc
    sc_value = 0.0
    if policy.m_disc >= 2:
        sc = self_consistency_loss(policy, target_policy, x, a1, rng.spawn(1))
        sc_value = sc.item()
        total = total + sc * config.alpha_sc
    return total, fm.item(), sc_value


def actor_loss(
    policy: ShortcutPolicy,
    target_policy: ShortcutPolicy,
    critic: Critic,
    batch: Batch,
    config: TrainConfig,
    rng: NoiseSource,
) -> tuple[Tensor, LossBreakdown]:
    total, fm_value, sc_value = generative_loss(
        policy, target_policy, batch.observations, batch.actions, config, rng.spawn(0)
    )
    breakdown = LossBreakdown(fm_loss=fm_value, sc_loss=sc_value)
    if config.alpha_q > 0:
        q, q_mean_abs = q_loss(policy, critic, batch.observations, config, rng.spawn(1))
        breakdown.q_loss = q.item()
        breakdown.q_mean_abs = q_mean_abs
        total = total + q * config.alpha_q
    return total, breakdown


def polyak_update(online: ParamStore, target: ParamStore, tau: float) -> ParamStore:
    """target <- (1 - tau) * target + tau * online, in place."""
    if not 0.0 <= tau <= 1.0:
        raise PreconditionError(f"tau must lie in [0, 1], got {tau}")
    for name in online:
        if name not in target or target[name].shape != online[name].shape:
            raise ShapeError(f"polyak_update: no matching target tensor for {name}")
        data = target[name].data
        data *= 1.0 - tau
        data += tau * online[name].data
    return target


def _optimize(loss: Tensor, params: ParamStore, config: TrainConfig) -> None:
    backward(loss)
    if not params.has_gradients():
        return
    clip_global_norm(params, config.grad_clip)
    adam_step(params, config.lr)


def train_step(state: TrainState, dataset: Dataset, config: TrainConfig, rng: NoiseSource) -> LossBreakdown:
    """One iteration: batch, critic update, actor update, target updates."""
    step_rng = rng.spawn(state.step)
    batch = dataset.sample(config.batch_size, step_rng.spawn(0))

    closs = critic_loss(state.policy, state.critic, batch, config, step_rng.spawn(1))
    _check_loss(closs, f"critic loss at step {state.step}")
    critic_value = closs.item()
    _optimize(closs, state.critic.online, config)

    aloss, breakdown = actor_loss(state.policy, state.target_policy, state.critic, batch, config, step_rng.spawn(2))
    _check_loss(aloss, f"actor loss at step {state.step}")
    if aloss.requires_grad:
        _optimize(aloss, state.policy.params, config)

    polyak_update(state.critic.online, state.critic.target, config.tau)
    polyak_update(state.policy.params, state.target_policy.params, config.tau)
    state.step += 1
    return replace(breakdown, critic_loss=critic_value)


def train(
    config: TrainConfig,
    dataset: Dataset,
    eval_hook: Optional[EvalHook] = None,
    eval_every: Optional[int] = None,
    state: Optional[TrainState] = None,
) -> TrainResult:
    """
    Run config.grad_steps iterations.

    A metrics row is emitted every `log_every` steps and at every evaluation.
    With an eval hook, evaluation runs once before training and then every
    `eval_every` steps.
    """
    if state is None:
        state = TrainState.create(dataset.obs_dim, dataset.action_dim, config)
    if (state.policy.obs_dim, state.policy.action_dim) != (dataset.obs_dim, dataset.action_dim):
        raise ShapeError("dataset dimensions do not match the networks")
    rng = NoiseSource(config.seed).spawn(TRAIN_STREAM)
    rows: list[MetricsRow] = []
    losses: list[LossBreakdown] = []

    if eval_hook is not None and eval_every:
        mean_return, success = eval_hook(state)
        rows.append(MetricsRow(step=state.step, eval_return=mean_return, success_rate=success))
        logger.info(f"step {state.step}: eval return {mean_return:.4f}, success {success:.3f}")

    for _ in range(config.grad_steps):
        breakdown = train_step(state, dataset, config, rng)
        losses.append(breakdown)
        step = state.step
        eval_due = eval_hook is not None and bool(eval_every) and step % eval_every == 0
        if step % config.log_every != 0 and not eval_due:
            continue
        row = MetricsRow(
            step=step,
            q_loss=breakdown.q_loss,
            fm_loss=breakdown.fm_loss,
            sc_loss=breakdown.sc_loss,
            critic_loss=breakdown.critic_loss,
        )
        if eval_due:
            row.eval_return, row.success_rate = eval_hook(state)
        rows.append(row)
        logger.info(
            f"step {step}: q {breakdown.q_loss:.4f} fm {breakdown.fm_loss:.4f} "
            f"sc {breakdown.sc_loss:.4f} critic {breakdown.critic_loss:.4f}"
            + (f" eval {row.eval_return:.4f}/{row.success_rate:.3f}" if eval_due else "")
        )
    return TrainResult(state, rows, losses)


def final_average(rows: Sequence[MetricsRow], k: int = 3) -> tuple[float, float]:
    """Mean return and success over the last k evaluation rows."""
    evals = [row for row in rows if row.has_eval]
    if not evals:
        raise PreconditionError("no evaluation rows to average")
    tail = evals[-k:]
    return (
        float(np.mean([row.eval_return for row in tail])),
        float(np.mean([row.success_rate for row in tail])),
    )


def train_generative(
    policy: ShortcutPolicy,
    samples: np.ndarray,
    config: TrainConfig,
    rng: NoiseSource,
    observations: Optional[np.ndarray] = None,
    steps: Optional[int] = None,
) -> tuple[ShortcutPolicy, list[LossBreakdown]]:
    """
    Fit a shortcut model to samples with FM and SC only.

    Used for the unconditional problems (obs_dim = 0). Returns the target
    copy alongside the per-step loss values.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != policy.action_dim or samples.shape[0] == 0:
        raise ShapeError(f"expected samples [n, {policy.action_dim}], got {samples.shape}")
    if observations is None:
        observations = np.zeros((samples.shape[0], policy.obs_dim))
    target_policy = policy.frozen_copy()
    history: list[LossBreakdown] = []
    for step in range(config.grad_steps if steps is None else steps):
        step_rng = rng.spawn(step)
        idx = step_rng.integers(0, samples.shape[0], config.batch_size)
        loss, fm_value, sc_value = generative_loss(
            policy, target_policy, observations[idx], samples[idx], config, step_rng.spawn(1)
        )
        _check_loss(loss, f"generative loss at step {step}")
        _optimize(loss, policy.params, config)
        polyak_update(policy.params, target_policy.params, config.tau)
        history.append(LossBreakdown(fm_loss=fm_value, sc_loss=sc_value))
        if (step + 1) % config.log_every == 0:
            logger.info(f"generative step {step + 1}: fm {fm_value:.5f} sc {sc_value:.5f}")
    return target_policy, history
