"""
Checks of the Wasserstein guarantees for shortcut samplers.

Exact 2-Wasserstein distance between equal-size sample sets comes from an
optimal assignment. The remaining helpers estimate the quantities the error
bounds depend on (flow-matching error, self-consistency error, Lipschitz
constants, drift magnitude) and compare measured errors with the bounds.
The suites at the bottom back the `verify` command.
"""
from __future__ import annotations

import dataclasses
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Protocol, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import softmax

from .config import TrainConfig
from .diffcore import (
    MlpSpec,
    ParamStore,
    backward,
    compare_gradients,
    finite_difference_gradients,
    grad_check,
    init_mlp,
)
from .errors import PreconditionError
from .noise import NoiseSource
from .shortcut import ShortcutPolicy, euler_sample, predict_velocity
from .sorl import train_generative
from .utils import is_power_of_two, log2_exact

logger = logging.getLogger(__name__)

MAX_EXACT_SAMPLES = 512


# Optimal transport


@dataclass
class EmpiricalDist:
    samples: np.ndarray

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples.reshape(-1, 1)
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise PreconditionError("an empirical distribution needs an [n, d] sample matrix with n >= 1")
        if not np.all(np.isfinite(samples)):
            raise PreconditionError("samples must be finite")
        self.samples = samples

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass
class OTPlan:
    """permutation[i] is the Q sample matched to P sample i."""

    permutation: np.ndarray
    cost: float

    @property
    def w2(self) -> float:
        return math.sqrt(self.cost / self.permutation.shape[0])


def _as_dist(value: EmpiricalDist | np.ndarray) -> EmpiricalDist:
    return value if isinstance(value, EmpiricalDist) else EmpiricalDist(value)


def optimal_plan(p: EmpiricalDist | np.ndarray, q: EmpiricalDist | np.ndarray) -> OTPlan:
    p, q = _as_dist(p), _as_dist(q)
    if p.n != q.n or p.dim != q.dim:
        raise PreconditionError(f"sample sets differ in shape: {p.samples.shape} vs {q.samples.shape}")
    if p.n > MAX_EXACT_SAMPLES:
        raise PreconditionError(f"exact assignment is limited to {MAX_EXACT_SAMPLES} samples, got {p.n}")
    costs = cdist(p.samples, q.samples, "sqeuclidean")
    rows, cols = linear_sum_assignment(costs)
    return OTPlan(permutation=cols[np.argsort(rows)], cost=math.fsum(costs[rows, cols].tolist()))


def w2_exact(p: EmpiricalDist | np.ndarray, q: EmpiricalDist | np.ndarray) -> float:
    """sqrt of the minimal mean squared matching cost."""
    return optimal_plan(p, q).w2


def w2_brute_force(p: np.ndarray, q: np.ndarray) -> float:
    """Minimum over every permutation; only for tiny n."""
    p, q = _as_dist(p).samples, _as_dist(q).samples
    costs = cdist(p, q, "sqeuclidean")
    n = p.shape[0]
    best = min(math.fsum(costs[i, perm[i]] for i in range(n)) for perm in itertools.permutations(range(n)))
    return math.sqrt(best / n)


# Test problems


@dataclass(frozen=True)
class GaussianMixture:
    """
    Isotropic Gaussian mixture target for the unconditional problem.

    std = 0 with one component is the one-point target. The drift of the
    linear-interpolation flow from N(0, I) is available in closed form.
    """

    means: np.ndarray
    std: float
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        weights = np.full(means.shape[0], 1.0 / means.shape[0]) if self.weights is None else np.asarray(self.weights)
        if self.std < 0 or weights.shape != (means.shape[0],) or not np.isclose(weights.sum(), 1.0):
            raise PreconditionError("mixture needs std >= 0 and one weight per component summing to 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def four_modes(cls) -> "GaussianMixture":
        return cls(np.array([[0.5, 0.5], [0.5, -0.5], [-0.5, 0.5], [-0.5, -0.5]]), 0.05)

    @classmethod
    def point(cls, target: Sequence[float]) -> "GaussianMixture":
        return cls(np.asarray(target, dtype=np.float64).reshape(1, -1), 0.0)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, rng: NoiseSource) -> np.ndarray:
        components = rng.generator().choice(self.means.shape[0], size=n, p=self.weights)
        return self.means[components] + self.std * rng.normal((n, self.dim))

    def interpolant(self, n: int, t: float, rng: NoiseSource) -> np.ndarray:
        """Draws of z_t = (1 - t) z0 + t a1."""
        z0 = rng.normal((n, self.dim))
        return (1.0 - t) * z0 + t * self.sample(n, rng.spawn(1))

    def drift(self, z: np.ndarray, t: float) -> np.ndarray:
        """Posterior-weighted component drifts mu + (t s^2 - (1 - t)) / var_t * (z - t mu)."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        var_t = (1.0 - t) ** 2 + (t * self.std) ** 2
        if var_t <= 0.0:
            raise PreconditionError("the drift of a point target is undefined at t = 1")
        centred = z[:, None, :] - t * self.means[None, :, :]
        logits = np.log(self.weights)[None, :] - np.sum(centred**2, axis=-1) / (2.0 * var_t)
        posterior = softmax(logits, axis=1)
        gain = (t * self.std**2 - (1.0 - t)) / var_t
        per_component = self.means[None, :, :] + gain * centred
        return np.einsum("nk,nkd->nd", posterior, per_component)


def exact_flow(problem: GaussianMixture, z: np.ndarray, t0: float, t1: float) -> np.ndarray:
    """Integrate dz/dt = v_t(z) from t0 to t1 for every row of z."""
    z = np.asarray(z, dtype=np.float64)
    shape = z.shape
    solution = solve_ivp(
        lambda t, y: problem.drift(y.reshape(shape), t).ravel(),
        (t0, t1),
        z.ravel(),
        method="DOP853",
        rtol=1e-9,
        atol=1e-11,
    )
    if not solution.success:
        raise PreconditionError(f"reference flow integration failed: {solution.message}")
    return solution.y[:, -1].reshape(shape)


# Velocity fields under test


class GenerativeField(Protocol):
    action_dim: int

    def velocity(self, z: np.ndarray, t: float, h: float) -> np.ndarray: ...

    def sample(self, n: int, m: int, rng: NoiseSource) -> np.ndarray: ...


class PolicyField:
    """A shortcut policy at one fixed observation (none when obs_dim = 0)."""

    def __init__(self, policy: ShortcutPolicy, observation: Optional[np.ndarray] = None):
        self.policy = policy
        self.action_dim = policy.action_dim
        self.observation = np.zeros(policy.obs_dim) if observation is None else np.asarray(observation)

    def _x(self, n: int) -> np.ndarray:
        return np.broadcast_to(self.observation.reshape(1, -1), (n, self.policy.obs_dim))

    def velocity(self, z: np.ndarray, t: float, h: float) -> np.ndarray:
        return predict_velocity(self.policy, z, t, h, self._x(z.shape[0])).data

    def sample(self, n: int, m: int, rng: NoiseSource) -> np.ndarray:
        return euler_sample(self.policy, self._x(n), m, rng).data


class OracleField:
    """Exact drift for velocities and true draws for samples."""

    def __init__(self, problem: GaussianMixture):
        self.problem = problem
        self.action_dim = problem.dim

    def velocity(self, z: np.ndarray, t: float, h: float) -> np.ndarray:
        return self.problem.drift(z, t)

    def sample(self, n: int, m: int, rng: NoiseSource) -> np.ndarray:
        return self.problem.sample(n, rng)


class FunctionField:
    """Wraps a plain function s(z, t, h); sampling runs forward Euler."""

    def __init__(self, fn: Callable[[np.ndarray, float, float], np.ndarray], action_dim: int):
        self.fn = fn
        self.action_dim = action_dim

    def velocity(self, z: np.ndarray, t: float, h: float) -> np.ndarray:
        return np.asarray(self.fn(z, t, h), dtype=np.float64)

    def sample(self, n: int, m: int, rng: NoiseSource) -> np.ndarray:
        z = rng.normal((n, self.action_dim))
        h = 1.0 / m
        for k in range(m):
            z = z + self.velocity(z, k * h, h) * h
        return z


# Estimators


@dataclass
class ErrorEstimate:
    """Mean squared error per grid cell; `eps` is the root of the worst cell."""

    cells: dict[tuple[float, float], float] = dataclasses.field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.cells.values()) if self.cells else 0.0

    @property
    def eps(self) -> float:
        return math.sqrt(self.worst)


def step_sizes(m_disc: int) -> list[float]:
    """h = 1/M, 2/M, ..., 1."""
    return [2**k / m_disc for k in range(log2_exact(m_disc) + 1)]


def consistency_grid(m_disc: int) -> list[tuple[float, float]]:
    """(h, t) pairs with h = 1/M ... 1/2 and t a multiple of h with t + 2h <= 1."""
    if m_disc < 2:
        return []
    cells = []
    for h in step_sizes(m_disc)[:-1]:
        for j in range(int(round(1.0 / h)) - 1):
            cells.append((h, j * h))
    return cells


def estimate_lipschitz(
    fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray, rng: NoiseSource, pairs: int = 10_000, scale: float = 0.05
) -> float:
    """Largest sampled difference quotient around the given points; a lower estimate."""
    points = np.asarray(points, dtype=np.float64)
    idx = rng.integers(0, points.shape[0], pairs)
    a = points[idx]
    b = a + scale * rng.normal(a.shape)
    num = np.linalg.norm(fn(a) - fn(b), axis=1)
    den = np.linalg.norm(a - b, axis=1)
    keep = den > 0
    return float(np.max(num[keep] / den[keep])) if np.any(keep) else 0.0


def estimate_consistency_error(
    field: GenerativeField, data: np.ndarray, m_disc: int, rng: NoiseSource
) -> ErrorEstimate:
    """
    Monte-Carlo E||s(z,t,h)/2 + s(z',t+h,h)/2 - s(z,t,2h)||^2 with z' = z + h s(z,t,h),
    one fresh interpolant draw per data row and grid cell.

    The second half-step velocity is read at t+h, where z' actually sits. This
    is the same residual consistency_residual trains against.
    """
    data = np.asarray(data, dtype=np.float64)
    estimate = ErrorEstimate()
    for cell, (h, t) in enumerate(consistency_grid(m_disc)):
        z0 = rng.spawn(cell).normal(data.shape)
        z = (1.0 - t) * z0 + t * data
        first = field.velocity(z, t, h)
        second = field.velocity(z + h * first, t + h, h)
        residual = 0.5 * (first + second) - field.velocity(z, t, 2.0 * h)
        estimate.cells[(h, t)] = float(np.mean(np.sum(residual**2, axis=1)))
    return estimate


def estimate_fm_error(
    field: GenerativeField,
    problem: GaussianMixture,
    m_disc: int,
    n_samples: int,
    rng: NoiseSource,
    t_grid: Optional[Iterable[float]] = None,
) -> ErrorEstimate:
    """Monte-Carlo E||s(z_t, t, 1/M) - v_t(z_t)||^2 per t; cells are keyed (1/M, t)."""
    h = 1.0 / m_disc
    grid = [k * h for k in range(m_disc)] if t_grid is None else list(t_grid)
    estimate = ErrorEstimate()
    for cell, t in enumerate(grid):
        z = problem.interpolant(n_samples, t, rng.spawn(cell))
        residual = field.velocity(z, t, h) - problem.drift(z, t)
        estimate.cells[(h, t)] = float(np.mean(np.sum(residual**2, axis=1)))
    return estimate


def drift_constants(problem: GaussianMixture, m_disc: int, n_samples: int, rng: NoiseSource) -> tuple[float, float]:
    """(L_v lower estimate, M_v) where M_v is the root of the largest mean squared drift on the grid."""
    lipschitz = 0.0
    worst = 0.0
    for k in range(m_disc):
        t = k / m_disc
        z = problem.interpolant(n_samples, t, rng.spawn(k, 0))
        v = problem.drift(z, t)
        worst = max(worst, float(np.mean(np.sum(v**2, axis=1))))
        lipschitz = max(lipschitz, estimate_lipschitz(lambda y: problem.drift(y, t), z, rng.spawn(k, 1), pairs=2000))
    return lipschitz, math.sqrt(worst)


def field_lipschitz(field: GenerativeField, m_disc: int, n_samples: int, rng: NoiseSource) -> float:
    """Sampled lower estimate of the Lipschitz constant of s(., t, h) over the step grid."""
    points = rng.normal((n_samples, field.action_dim))
    best = 0.0
    for cell, h in enumerate(step_sizes(m_disc)):
        for t in (0.0, max(0.0, 1.0 - h)):
            best = max(
                best,
                estimate_lipschitz(lambda y: field.velocity(y, t, h), points, rng.spawn(cell, int(t > 0)), pairs=2000),
            )
    return best


# Bounds


def lemma3_bound(lipschitz: float, h: float, eps: float) -> float:
    """((1 + L h)^(1/h) - 1) * eps / L, with the L -> 0 limit eps."""
    if lipschitz <= 0:
        return eps
    return ((1.0 + lipschitz * h) ** (1.0 / h) - 1.0) * eps / lipschitz


def theorem2_bound(
    lipschitz: float, lipschitz_v: float, m_v: float, eps_fm: float, eps_sc: float, m_disc: int, h: float
) -> float:
    """Step-size dependent W2 bound; growth factor uses its L -> 0 limit when L = 0."""
    if lipschitz > 0:
        growth = math.expm1(math.log1p(lipschitz * h) / h) / lipschitz
    else:
        growth = 1.0
    discretization = math.e * lipschitz_v / m_disc * (m_v + 1.0)
    consistency = eps_sc * math.log2(m_disc * h)
    return growth * math.exp(0.5 * lipschitz * h) * (discretization + eps_fm + consistency)


@dataclass
class Lemma3Report:
    h: float
    eps: float
    lipschitz: float
    lipschitz_est: float
    measured: float
    bound: float
    satisfied: bool

    COLUMNS = ("h", "eps", "L", "L_est", "measured", "bound", "satisfied")

    def values(self) -> list[object]:
        return [self.h, self.eps, self.lipschitz, self.lipschitz_est, self.measured, self.bound, self.satisfied]


class PerturbedContraction:
    """
    Exact steps of dz/dt = -z plus an injected error of norm h * eps per step.

    The perturbation direction is random per call; s(., t, h) is Lipschitz with
    constant (1 - e^{-h}) / h <= 1.
    """

    lipschitz = 1.0

    def __init__(self, eps: float, dim: int, rng: NoiseSource):
        self.eps = eps
        self.action_dim = dim
        self.rng = rng

    @staticmethod
    def flow(z: np.ndarray, t: float, h: float) -> np.ndarray:
        return z * math.exp(-h)

    def exact_velocity(self, z: np.ndarray, t: float, h: float) -> np.ndarray:
        return (self.flow(z, t, h) - z) / h

    def velocity(self, z: np.ndarray, t: float, h: float) -> np.ndarray:
        direction = self.rng.normal(z.shape)
        direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
        return self.exact_velocity(z, t, h) + self.eps * direction


def check_lemma3(
    model: PerturbedContraction,
    flow: Callable[[np.ndarray, float, float], np.ndarray],
    h: float,
    lipschitz: float,
    eps: float,
    n: int,
    rng: NoiseSource,
) -> Lemma3Report:
    """Run 1/h perturbed steps next to the exact flow and compare the RMSE with the bound."""
    steps = int(round(1.0 / h))
    z_exact = rng.normal((n, model.action_dim))
    z_model = z_exact.copy()
    for k in range(steps):
        t = k * h
        z_model = z_model + model.velocity(z_model, t, h) * h
        z_exact = flow(z_exact, t, h)
    measured = math.sqrt(float(np.mean(np.sum((z_model - z_exact) ** 2, axis=1))))
    points = rng.spawn(1).normal((n, model.action_dim))
    lipschitz_est = estimate_lipschitz(lambda y: model.exact_velocity(y, 0.0, h), points, rng.spawn(2), pairs=2000)
    bound = lemma3_bound(lipschitz, h, eps)
    return Lemma3Report(h, eps, lipschitz, lipschitz_est, measured, bound, measured <= bound * (1.0 + 1e-9) + 1e-12)


@dataclass
class Lemma1Report:
    h0: float
    measured: float
    bound: float
    eps_fm: float
    lipschitz_v: float
    m_v: float
    satisfied: bool


def check_lemma1(
    field: GenerativeField, problem: GaussianMixture, m_disc: int, n: int, rng: NoiseSource
) -> Lemma1Report:
    """Worst single smallest-step error against the integrated flow, next to its bound."""
    h0 = 1.0 / m_disc
    eps_fm = estimate_fm_error(field, problem, m_disc, n, rng.spawn(0)).eps
    lipschitz_v, m_v = drift_constants(problem, m_disc, n, rng.spawn(1))
    measured = 0.0
    for k in range(m_disc):
        t = k * h0
        z = problem.interpolant(n, t, rng.spawn(2, k))
        stepped = z + field.velocity(z, t, h0) * h0
        error = math.sqrt(float(np.mean(np.sum((stepped - exact_flow(problem, z, t, t + h0)) ** 2, axis=1))))
        measured = max(measured, error)
    bound = h0 * (lipschitz_v * math.exp(lipschitz_v * h0) * h0 * (m_v + 1.0) + eps_fm)
    return Lemma1Report(h0, measured, bound, eps_fm, lipschitz_v, m_v, measured <= bound)


@dataclass
class BoundReport:
    h: float
    w2: float
    eps_fm: float
    eps_sc: float
    lipschitz: float
    lipschitz_v: float
    m_v: float
    m_disc: int
    bound: float
    satisfied: bool

    COLUMNS = ("h", "w2", "eps_fm", "eps_sc", "L_est", "bound", "satisfied")

    def values(self) -> list[object]:
        return [self.h, self.w2, self.eps_fm, self.eps_sc, self.lipschitz, self.bound, self.satisfied]


def w2_floor(problem: GaussianMixture, n: int, rng: NoiseSource) -> float:
    """W2 between two independent n-sample draws of the target."""
    return w2_exact(problem.sample(n, rng.spawn(0)), problem.sample(n, rng.spawn(1)))


def theorem1_report(
    field: GenerativeField, problem: GaussianMixture, m_disc: int, n: int, rng: NoiseSource
) -> list[BoundReport]:
    """Measured W2 against the step-size dependent bound for every h = 2^k / M."""
    if not is_power_of_two(m_disc):
        raise PreconditionError(f"m_disc must be a power of two, got {m_disc}")
    target = problem.sample(n, rng.spawn(0))
    eps_fm = estimate_fm_error(field, problem, m_disc, n, rng.spawn(1)).eps
    eps_sc = estimate_consistency_error(field, problem.sample(n, rng.spawn(2)), m_disc, rng.spawn(3)).eps
    lipschitz = field_lipschitz(field, m_disc, n, rng.spawn(4))
    lipschitz_v, m_v = drift_constants(problem, m_disc, n, rng.spawn(5))
    reports = []
    for h in step_sizes(m_disc):
        m = int(round(1.0 / h))
        w2 = w2_exact(field.sample(n, m, rng.spawn(6, m)), target)
        bound = theorem2_bound(lipschitz, lipschitz_v, m_v, eps_fm, eps_sc, m_disc, h)
        reports.append(BoundReport(h, w2, eps_fm, eps_sc, lipschitz, lipschitz_v, m_v, m_disc, bound, w2 <= bound))
        logger.info(f"h={h}: W2 {w2:.4f}, bound {bound:.4f}")
    return reports


# Suites


@dataclass
class SuiteResult:
    name: str
    columns: tuple[str, ...]
    rows: list[list[object]]
    passed: bool


def btt_gradient_check(m: int, seed: int, tolerance: float = 1e-3) -> float:
    """Relative error of backward() through m Euler steps against central differences."""
    rng = NoiseSource(seed)
    spec = MlpSpec(2 + 2 + 2, 2, (8,))
    policy = ShortcutPolicy(ParamStore(init_mlp(spec, rng.spawn(0))), spec, max(m, 1), 2, 2)
    x = rng.spawn(1).normal((3, 2))
    noise = rng.spawn(2).normal((3, 2))

    def loss_fn():
        return euler_sample(policy, x, m, noise=noise).mean()

    backward(loss_fn())
    analytic = {name: grad.copy() for name, grad in policy.params.grads().items() if grad is not None}
    policy.params.zero_grad()
    numeric = finite_difference_gradients(policy.params, loss_fn)
    return compare_gradients(analytic, numeric, tolerance).max_rel_error


def run_gradcheck_suite(seed: int = 0, cases: int = 20, tolerance: float = 1e-4) -> SuiteResult:
    rng = NoiseSource(seed)
    rows: list[list[object]] = []
    passed = True
    for case in range(cases):
        draw = rng.spawn(case).integers(1, 17, 4)
        hidden = tuple(int(w) for w in draw[: int(draw[3]) % 3])
        spec = MlpSpec(int(draw[0]) % 6 + 1, int(draw[1]) % 4 + 1, hidden, use_layer_norm=bool(case % 2))
        report = grad_check(spec, seed + case, tolerance)
        rows.append([f"mlp{hidden}", report.max_rel_error, tolerance, report.passed])
        passed &= report.passed
    for m in (1, 2, 4):
        error = btt_gradient_check(m, seed + m)
        ok = error < 1e-3
        rows.append([f"euler_sample m={m}", error, 1e-3, ok])
        passed &= ok
    return SuiteResult("gradcheck", ("case", "max_rel_error", "tolerance", "passed"), rows, passed)


def run_ot_suite(seed: int = 0, instances: int = 200) -> SuiteResult:
    rng = NoiseSource(seed)
    worst_brute = 0.0
    worst_symmetry = 0.0
    worst_triangle = -math.inf
    for i in range(instances):
        draw = rng.spawn(i)
        n, d = int(draw.integers(1, 8, 1)[0]), int(draw.integers(1, 4, 1)[0])
        p, q, r = (draw.spawn(k).normal((n, d)) for k in range(3))
        pq = w2_exact(p, q)
        worst_brute = max(worst_brute, abs(pq - w2_brute_force(p, q)))
        worst_symmetry = max(worst_symmetry, abs(pq - w2_exact(q, p)))
        worst_triangle = max(worst_triangle, w2_exact(p, r) - (pq + w2_exact(q, r)))
    rows = [
        ["brute_force", instances, worst_brute, worst_brute <= 1e-9],
        ["symmetry", instances, worst_symmetry, worst_symmetry == 0.0],
        ["triangle", instances, max(worst_triangle, 0.0), worst_triangle <= 1e-9],
    ]
    return SuiteResult("ot", ("check", "instances", "max_violation", "passed"), rows, all(row[-1] for row in rows))


def run_lemma3_suite(seed: int = 0, n: int = 2000) -> SuiteResult:
    rng = NoiseSource(seed)
    rows = []
    passed = True
    for i, eps in enumerate((0.0, 0.005, 0.01, 0.02)):
        for j, h in enumerate((1 / 8, 1 / 4, 1 / 2, 1.0)):
            model = PerturbedContraction(eps, 2, rng.spawn(i, j, 0))
            report = check_lemma3(model, model.flow, h, model.lipschitz, eps, n, rng.spawn(i, j, 1))
            rows.append(report.values())
            passed &= report.satisfied
    return SuiteResult("lemma3", Lemma3Report.COLUMNS, rows, passed)


def run_theorem1_suite(
    seed: int = 0,
    steps: int = 20_000,
    n: int = 256,
    w2_threshold: float = 0.3,
    m_disc: int = 8,
    ablation_ratio: float = 1.5,
) -> SuiteResult:
    """
    Train an unconditional shortcut model on the four-mode mixture and report
    measured W2 against the bound. The hard checks are W2 at the finest and the
    single-step budget staying under w2_threshold, and a copy trained without
    the consistency term landing at least ablation_ratio times further away in
    one step.
    """
    problem = GaussianMixture.four_modes()
    rng = NoiseSource(seed)
    config = TrainConfig(alpha_q=0.0, m_disc=m_disc, m_btt=m_disc, lr=1e-3, batch_size=256, seed=seed, log_every=1000)
    data = problem.sample(8192, rng.spawn(1))
    policy = ShortcutPolicy.create(0, problem.dim, m_disc, config.policy_hidden, rng.spawn(0))
    train_generative(policy, data, config, rng.spawn(2), steps=steps)
    ablation = ShortcutPolicy.create(0, problem.dim, m_disc, config.policy_hidden, rng.spawn(0))
    train_generative(ablation, data, config.model_copy(update={"alpha_sc": 0.0}), rng.spawn(2), steps=steps)

    report_rng = rng.spawn(3)
    reports = theorem1_report(PolicyField(policy), problem, m_disc, n, report_rng)
    floor = w2_floor(problem, n, rng.spawn(4))
    logger.info(f"W2 sampling floor at n={n}: {floor:.4f}")
    target = problem.sample(n, report_rng.spawn(0))
    ablation_w2 = w2_exact(PolicyField(ablation).sample(n, 1, report_rng.spawn(6, 1)), target)
    one_step_w2 = next(r.w2 for r in reports if r.h == 1.0)
    ratio_ok = bool(ablation_w2 >= ablation_ratio * one_step_w2)
    logger.info(f"one-step W2 without consistency {ablation_w2:.4f}, with {one_step_w2:.4f}")

    checked = [r for r in reports if r.h in (1.0 / m_disc, 1.0)]
    passed = all(r.w2 <= w2_threshold for r in checked) and ratio_ok
    rows: list[list[object]] = [["shortcut", *r.values()] for r in reports]
    rows.append(["no_consistency", 1.0, ablation_w2, None, None, None, None, ratio_ok])
    return SuiteResult("theorem1", ("model",) + BoundReport.COLUMNS, rows, passed)


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "gradcheck": run_gradcheck_suite,
    "ot": run_ot_suite,
    "lemma3": run_lemma3_suite,
    "theorem1": run_theorem1_suite,
}


def run_suite(name: str, **options: object) -> SuiteResult:
    try:
        runner = SUITES[name]
    except KeyError:
        raise PreconditionError(f"unknown suite {name!r}; valid suites: {', '.join(SUITES)}") from None
    result = runner(**options)
    logger.info(f"suite {name}: {'passed' if result.passed else 'FAILED'}")
    return result

