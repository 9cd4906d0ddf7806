"""
The shortcut generative model s(a_t, t, h | x).

A shortcut model is a velocity network that also sees the step size h, so one
jump of size 2h can be trained to agree with two jumps of size h. This module
holds the model, its two regression losses and the budgeted Euler sampler.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .diffcore import (
    MlpSpec,
    Operand,
    ParamStore,
    Tensor,
    as_tensor,
    concat,
    ensure_finite,
    init_mlp,
    mlp_forward,
    stopgrad,
)
from .errors import PreconditionError, ShapeError
from .noise import NoiseSource
from .utils import is_power_of_two, log2_exact

__all__ = [
    "NoiseSource",
    "ShortcutPolicy",
    "StepPair",
    "clip_action",
    "consistency_residual",
    "euler_sample",
    "flow_matching_loss",
    "flow_matching_residual",
    "interpolate",
    "predict_velocity",
    "sample_step_pair",
    "sample_step_pairs",
    "self_consistency_loss",
]


@dataclass
class ShortcutPolicy:
    """Parameters of s_theta plus the step grid it was trained on."""

    params: ParamStore
    spec: MlpSpec
    m_disc: int
    action_dim: int
    obs_dim: int

    def __post_init__(self) -> None:
        if not is_power_of_two(self.m_disc):
            raise PreconditionError(f"m_disc must be a power of two, got {self.m_disc}")
        if self.spec.input_dim != self.action_dim + self.obs_dim + 2 or self.spec.output_dim != self.action_dim:
            raise ShapeError(f"spec {self.spec} does not match action_dim={self.action_dim}, obs_dim={self.obs_dim}")

    @classmethod
    def create(
        cls, obs_dim: int, action_dim: int, m_disc: int, hidden_dims: Sequence[int], rng: NoiseSource
    ) -> "ShortcutPolicy":
        spec = MlpSpec(action_dim + obs_dim + 2, action_dim, tuple(hidden_dims))
        return cls(ParamStore(init_mlp(spec, rng)), spec, m_disc, action_dim, obs_dim)

    def frozen_copy(self) -> "ShortcutPolicy":
        """Independent non-trainable copy (the self-consistency target network)."""
        return ShortcutPolicy(self.params.clone(trainable=False), self.spec, self.m_disc, self.action_dim, self.obs_dim)


@dataclass(frozen=True)
class StepPair:
    t: float
    h: float

    def is_legal(self, m_disc: int) -> bool:
        d = self.h * m_disc
        return (
            0.0 <= self.t < 1.0
            and 0.0 < self.h <= 1.0
            and float(d).is_integer()
            and is_power_of_two(int(d))
            and int(d) <= m_disc // 2
            and float(self.t / self.h).is_integer()
            and self.t + 2.0 * self.h <= 1.0
        )


def _column(value: Operand, batch: int) -> np.ndarray:
    array = np.asarray(as_tensor(value).data, dtype=np.float64)
    if array.ndim == 0:
        return np.full((batch, 1), float(array))
    return array.reshape(batch, 1)


def _observations(x: Operand, batch: int, obs_dim: int) -> np.ndarray:
    array = np.asarray(as_tensor(x).data, dtype=np.float64)
    if obs_dim == 0:
        return np.zeros((batch, 0))
    if array.shape != (batch, obs_dim):
        raise ShapeError(f"expected observations [{batch}, {obs_dim}], got {array.shape}")
    return array


def interpolate(a0: Operand, a1: Operand, t: Operand) -> Tensor:
    """Row-wise (1 - t) * a0 + t * a1."""
    a0, a1 = as_tensor(a0), as_tensor(a1)
    if a0.shape != a1.shape or a0.ndim != 2:
        raise ShapeError(f"interpolate needs matching [batch, A] inputs, got {a0.shape} and {a1.shape}")
    tt = _column(t, a0.shape[0])
    if np.any(tt < 0.0) or np.any(tt > 1.0):
        raise PreconditionError("interpolation times must lie in [0, 1]")
    return a0 * (1.0 - tt) + a1 * tt


def predict_velocity(policy: ShortcutPolicy, a_t: Operand, t: Operand, h: Operand, x: Operand) -> Tensor:
    """Evaluate s_theta on [a_t, x, t, h]."""
    a_t = as_tensor(a_t)
    if a_t.ndim != 2 or a_t.shape[1] != policy.action_dim:
        raise ShapeError(f"expected actions [batch, {policy.action_dim}], got {a_t.shape}")
    batch = a_t.shape[0]
    inputs = concat([a_t, _observations(x, batch, policy.obs_dim), _column(t, batch), _column(h, batch)], axis=1)
    return mlp_forward(policy.params, policy.spec, inputs)


def sample_step_pairs(m_disc: int, size: int, rng: NoiseSource) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized step-pair draws: d uniform over powers of two below m_disc, t uniform on legal multiples of h."""
    if not is_power_of_two(m_disc):
        raise PreconditionError(f"m_disc must be a power of two, got {m_disc}")
    if m_disc < 2:
        raise PreconditionError("m_disc = 1 has no self-consistency pairs")
    d = rng.choice([2**k for k in range(log2_exact(m_disc))], size)
    h = d / m_disc
    slots = m_disc // d - 1
    j = np.minimum(np.floor(rng.uniform(size) * slots).astype(np.int64), slots - 1)
    return j * h, h


def sample_step_pair(m_disc: int, rng: NoiseSource) -> StepPair:
    t, h = sample_step_pairs(m_disc, 1, rng)
    return StepPair(float(t[0]), float(h[0]))


def flow_matching_residual(
    policy: ShortcutPolicy, x: Operand, a0: np.ndarray, a1: np.ndarray, t: np.ndarray, h: Operand
) -> Tensor:
    """Per-row ||s(a_t, t, h | x) - (a1 - a0)||^2."""
    a_t = interpolate(a0, a1, t)
    residual = predict_velocity(policy, a_t, t, h, x) - (np.asarray(a1) - np.asarray(a0))
    return (residual * residual).sum(axis=1)


def flow_matching_loss(
    policy: ShortcutPolicy, x: Operand, a1: np.ndarray, rng: NoiseSource, step_size: Optional[float] = None
) -> Tensor:
    """Flow matching against dataset actions, queried at step size 1/M_disc unless told otherwise."""
    a1 = np.asarray(a1, dtype=np.float64)
    if a1.ndim != 2 or a1.shape[0] == 0:
        raise PreconditionError("flow_matching_loss needs a non-empty [batch, A] batch")
    batch = a1.shape[0]
    a0 = rng.normal(a1.shape)
    t = rng.uniform(batch)
    h = 1.0 / policy.m_disc if step_size is None else step_size
    loss = flow_matching_residual(policy, x, a0, a1, t, h).mean()
    ensure_finite(loss, "flow_matching_loss")
    return loss


def consistency_residual(
    policy: ShortcutPolicy, target_policy: ShortcutPolicy, x: Operand, a_t: np.ndarray, t: np.ndarray, h: np.ndarray
) -> Tensor:
    """Per-row ||s(a_t, t, 2h) - mean of two h-steps taken by the target network||^2."""
    a_t = np.asarray(as_tensor(a_t).data)
    batch = a_t.shape[0]
    t_col, h_col = _column(t, batch), _column(h, batch)
    first = predict_velocity(target_policy, a_t, t_col, h_col, x).data
    a_next = a_t + first * h_col
    second = predict_velocity(target_policy, a_next, t_col + h_col, h_col, x).data
    s_target = stopgrad((first + second) / 2.0)
    residual = predict_velocity(policy, a_t, t_col, 2.0 * h_col, x) - s_target
    return (residual * residual).sum(axis=1)


def self_consistency_loss(
    policy: ShortcutPolicy, target_policy: ShortcutPolicy, x: Operand, a1: np.ndarray, rng: NoiseSource
) -> Tensor:
    """Double-step vs two single-steps, one (t, h) draw per row."""
    if policy.m_disc < 2:
        raise PreconditionError("self-consistency needs m_disc >= 2")
    a1 = np.asarray(a1, dtype=np.float64)
    if a1.ndim != 2 or a1.shape[0] == 0:
        raise PreconditionError("self_consistency_loss needs a non-empty [batch, A] batch")
    batch = a1.shape[0]
    t, h = sample_step_pairs(policy.m_disc, batch, rng)
    a0 = rng.normal(a1.shape)
    a_t = interpolate(a0, a1, t).data
    loss = consistency_residual(policy, target_policy, x, a_t, t, h).mean()
    ensure_finite(loss, "self_consistency_loss")
    return loss


def euler_sample(
    policy: ShortcutPolicy,
    x: Operand,
    m: int,
    rng: Optional[NoiseSource] = None,
    noise: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Forward Euler from Gaussian noise with m equal steps of size 1/m.

    The returned tensor keeps the whole chain, so gradients reach the policy
    parameters through every step.
    """
    if not is_power_of_two(m) or m > policy.m_disc:
        raise PreconditionError(f"step budget must be a power of two <= {policy.m_disc}, got {m}")
    x_data = np.asarray(as_tensor(x).data, dtype=np.float64)
    batch = x_data.shape[0] if x_data.ndim == 2 else (1 if noise is None else np.asarray(noise).shape[0])
    if noise is None:
        if rng is None:
            raise PreconditionError("euler_sample needs either rng or explicit noise")
        noise = rng.normal((batch, policy.action_dim))
    a = Tensor(np.asarray(noise, dtype=np.float64))
    h = 1.0 / m
    for n in range(m):
        a = a + predict_velocity(policy, a, n * h, h, x) * h
    return a


def clip_action(a: np.ndarray, bound: float) -> np.ndarray:
    """Clamp to [-bound, bound]; only ever applied where actions meet an environment."""
    if bound <= 0:
        raise PreconditionError("action bound must be positive")
    return np.clip(np.asarray(a, dtype=np.float64), -bound, bound)
