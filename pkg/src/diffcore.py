"""
Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor records the operation that produced it together with one gradient
function per input. backward() walks the recorded graph once, in reverse
topological order, and writes d(loss)/d(leaf) into every trainable leaf it
reaches. ParamStore groups the leaves of one network with their Adam state.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np
from scipy.special import erf

from .errors import GraphConsumedError, NonFiniteError, PreconditionError, ShapeError
from .noise import NoiseSource

logger = logging.getLogger(__name__)

GradFn = Callable[[np.ndarray], np.ndarray]
Operand = Union["Tensor", np.ndarray, float, int]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense float64 array that remembers how it was computed."""

    __array_priority__ = 1000

    def __init__(self, data: Union[np.ndarray, float, Sequence[float]], requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fns: Optional[tuple[GradFn, ...]] = None
        self._op = ""
        self._consumed = False

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], grad_fns: tuple[GradFn, ...], op: str) -> "Tensor":
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._grad_fns = grad_fns
            out._op = op
        return out

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op or 'leaf'!r})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    # Arithmetic

    def __add__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)
        return Tensor._from_op(
            self.data + other.data,
            (self, other),
            (lambda g: _unbroadcast(g, self.shape), lambda g: _unbroadcast(g, other.shape)),
            "add",
        )

    def __radd__(self, other: Operand) -> "Tensor":
        return as_tensor(other) + self

    def __sub__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)
        return Tensor._from_op(
            self.data - other.data,
            (self, other),
            (lambda g: _unbroadcast(g, self.shape), lambda g: -_unbroadcast(g, other.shape)),
            "sub",
        )

    def __rsub__(self, other: Operand) -> "Tensor":
        return as_tensor(other) - self

    def __neg__(self) -> "Tensor":
        return Tensor._from_op(-self.data, (self,), (lambda g: -g,), "neg")

    def __mul__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._from_op(
            a * b,
            (self, other),
            (lambda g: _unbroadcast(g * b, a.shape), lambda g: _unbroadcast(g * a, b.shape)),
            "mul",
        )

    def __rmul__(self, other: Operand) -> "Tensor":
        return as_tensor(other) * self

    def __truediv__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._from_op(
            a / b,
            (self, other),
            (lambda g: _unbroadcast(g / b, a.shape), lambda g: _unbroadcast(-g * a / (b * b), b.shape)),
            "div",
        )

    def __rtruediv__(self, other: Operand) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.data
        p = float(exponent)
        return Tensor._from_op(a**p, (self,), (lambda g: g * p * a ** (p - 1.0),), "pow")

    def __matmul__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul shape mismatch: {self.shape} @ {other.shape}")
        a, b = self.data, other.data
        return Tensor._from_op(a @ b, (self, other), (lambda g: g @ b.T, lambda g: a.T @ g), "matmul")

    # Reductions and shape

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def grad_fn(g: np.ndarray) -> np.ndarray:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape)

        return Tensor._from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), (grad_fn,), "sum")

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: int) -> "Tensor":
        old = self.shape
        return Tensor._from_op(self.data.reshape(shape), (self,), (lambda g: g.reshape(old),), "reshape")

    def abs(self) -> "Tensor":
        sign = np.sign(self.data)
        return Tensor._from_op(np.abs(self.data), (self,), (lambda g: g * sign,), "abs")

    def square(self) -> "Tensor":
        return self * self


def as_tensor(value: Operand) -> Tensor:
    """Wrap arrays and scalars as constant tensors; tensors pass through."""
    return value if isinstance(value, Tensor) else Tensor(value)


def stopgrad(value: Operand) -> Tensor:
    """Same values, no path back to whatever produced them."""
    return Tensor(as_tensor(value).data)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x), using the error function."""
    a = x.data
    cdf = 0.5 * (1.0 + erf(a * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * a * a)
    return Tensor._from_op(a * cdf, (x,), (lambda g: g * (cdf + a * pdf),), "gelu")


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise minimum; ties send the gradient to the first argument."""
    take_a = a.data <= b.data
    return Tensor._from_op(
        np.where(take_a, a.data, b.data),
        (a, b),
        (lambda g: _unbroadcast(g * take_a, a.shape), lambda g: _unbroadcast(g * ~take_a, b.shape)),
        "minimum",
    )


def concat(tensors: Sequence[Operand], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def slicer(i: int) -> GradFn:
        def grad_fn(g: np.ndarray) -> np.ndarray:
            index = [slice(None)] * g.ndim
            index[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
            return g[tuple(index)]

        return grad_fn

    data = np.concatenate([p.data for p in parts], axis=axis)
    return Tensor._from_op(data, tuple(parts), tuple(slicer(i) for i in range(len(parts))), "concat")


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply a learned scale and shift."""
    centered = x - x.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (variance + eps) ** -0.5 * scale + shift


def ensure_finite(value: Union[Tensor, np.ndarray], where: str) -> None:
    data = value.data if isinstance(value, Tensor) else np.asarray(value)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {where}")


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Set .grad on every trainable leaf reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphConsumedError("this graph was already differentiated")
    order = _topological_order(loss)
    for node in order:
        if node.requires_grad:
            node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._grad_fns is None:
            continue
        for parent, grad_fn in zip(node._parents, node._grad_fns):
            if parent.requires_grad:
                parent.grad += grad_fn(node.grad)
    # Intermediates give up their references; leaves keep their gradients.
    for node in order:
        if node._grad_fns is not None:
            node._parents = ()
            node._grad_fns = None
            node.grad = None
    loss._consumed = True


class ParamStore:
    """Named parameter tensors of one network with Adam moments and a step counter."""

    def __init__(self, arrays: dict[str, np.ndarray], trainable: bool = True):
        self.trainable = trainable
        self.tensors: dict[str, Tensor] = {
            name: Tensor(np.array(value, dtype=np.float64, copy=True), requires_grad=trainable)
            for name, value in arrays.items()
        }
        self.first_moment = {name: np.zeros_like(t.data) for name, t in self.tensors.items()}
        self.second_moment = {name: np.zeros_like(t.data) for name, t in self.tensors.items()}
        self.step = 0

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: object) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def grads(self) -> dict[str, Optional[np.ndarray]]:
        return {name: t.grad for name, t in self.tensors.items()}

    def has_gradients(self) -> bool:
        return any(t.grad is not None for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def assign(self, name: str, value: np.ndarray) -> None:
        """Overwrite a parameter in place, keeping views that share its storage valid."""
        target = self.tensors[name].data
        value = np.asarray(value, dtype=np.float64)
        if value.shape != target.shape:
            raise ShapeError(f"{name}: expected shape {target.shape}, got {value.shape}")
        target[...] = value

    def clone(self, trainable: Optional[bool] = None) -> "ParamStore":
        """Deep copy, including optimizer state."""
        copy = ParamStore(self.arrays(), self.trainable if trainable is None else trainable)
        copy.first_moment = {k: v.copy() for k, v in self.first_moment.items()}
        copy.second_moment = {k: v.copy() for k, v in self.second_moment.items()}
        copy.step = self.step
        return copy

    def detached(self) -> "ParamStore":
        """Non-trainable view sharing storage with this store."""
        view = ParamStore.__new__(ParamStore)
        view.trainable = False
        view.tensors = {name: Tensor(t.data) for name, t in self.tensors.items()}
        view.first_moment = self.first_moment
        view.second_moment = self.second_moment
        view.step = self.step
        return view


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes of a fully connected network; empty hidden_dims means one affine layer."""

    input_dim: int
    output_dim: int
    hidden_dims: tuple[int, ...] = (64, 64)
    use_layer_norm: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1:
            raise PreconditionError(f"degenerate MLP spec: input_dim={self.input_dim}, output_dim={self.output_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise PreconditionError(f"hidden sizes must be positive: {self.hidden_dims}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]

    @property
    def num_layers(self) -> int:
        return len(self.hidden_dims) + 1

    def num_parameters(self) -> int:
        dims = self.layer_dims
        total = sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(self.num_layers))
        if self.use_layer_norm:
            total += 2 * sum(self.hidden_dims)
        return total


def _layer_shapes(spec: MlpSpec, prefix: str) -> dict[str, tuple[int, ...]]:
    dims = spec.layer_dims
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(spec.num_layers):
        shapes[f"{prefix}layer{i}.weight"] = (dims[i], dims[i + 1])
        shapes[f"{prefix}layer{i}.bias"] = (dims[i + 1],)
        if spec.use_layer_norm and i < spec.num_layers - 1:
            shapes[f"{prefix}layer{i}.ln_scale"] = (dims[i + 1],)
            shapes[f"{prefix}layer{i}.ln_shift"] = (dims[i + 1],)
    return shapes


def init_mlp(spec: MlpSpec, rng: NoiseSource, prefix: str = "") -> dict[str, np.ndarray]:
    """Fan-in scaled normal weights clipped at two standard deviations, zero biases."""
    arrays: dict[str, np.ndarray] = {}
    for name, shape in _layer_shapes(spec, prefix).items():
        if name.endswith(".weight"):
            std = 1.0 / math.sqrt(shape[0])
            arrays[name] = np.clip(rng.normal(shape), -2.0, 2.0) * std
        elif name.endswith(".ln_scale"):
            arrays[name] = np.ones(shape)
        else:
            arrays[name] = np.zeros(shape)
    return arrays


def zero_mlp(spec: MlpSpec, prefix: str = "") -> dict[str, np.ndarray]:
    """All weights and biases zero (layer-norm scales stay at one)."""
    return {
        name: (np.ones(shape) if name.endswith(".ln_scale") else np.zeros(shape))
        for name, shape in _layer_shapes(spec, prefix).items()
    }


def mlp_forward(params: ParamStore, spec: MlpSpec, inputs: Operand, prefix: str = "") -> Tensor:
    """Dense -> GELU -> (LayerNorm) per hidden layer, plain dense output layer."""
    x = as_tensor(inputs)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"expected input [batch, {spec.input_dim}], got {x.shape}")
    last = spec.num_layers - 1
    for i in range(spec.num_layers):
        x = x @ params[f"{prefix}layer{i}.weight"] + params[f"{prefix}layer{i}.bias"]
        if i < last:
            x = gelu(x)
            if spec.use_layer_norm:
                x = layer_norm(x, params[f"{prefix}layer{i}.ln_scale"], params[f"{prefix}layer{i}.ln_shift"])
    ensure_finite(x, "mlp_forward")
    return x


def adam_step(
    params: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> ParamStore:
    """Bias-corrected Adam update in place; clears gradients afterwards."""
    if not params.has_gradients():
        raise PreconditionError("adam_step called with empty gradients")
    params.step += 1
    correction1 = 1.0 - beta1**params.step
    correction2 = 1.0 - beta2**params.step
    for name, tensor in params.tensors.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        m = params.first_moment[name]
        v = params.second_moment[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        tensor.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    params.zero_grad()
    return params


def global_grad_norm(params: ParamStore) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in params.grads().values() if g is not None))


def clip_global_norm(params: ParamStore, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most max_norm; returns the factor used."""
    if max_norm <= 0:
        raise PreconditionError("max_norm must be positive")
    norm = global_grad_norm(params)
    # Relative slack keeps a second clip at the same threshold a no-op.
    if norm <= max_norm * (1.0 + 1e-12):
        return 1.0
    factor = max_norm / norm
    for tensor in params.tensors.values():
        if tensor.grad is not None:
            tensor.grad = tensor.grad * factor
    return factor


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_block: str
    tolerance: float
    block_errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def finite_difference_gradients(
    params: ParamStore, loss_fn: Callable[[], Tensor], step: float = 1e-5
) -> dict[str, np.ndarray]:
    """Central differences of loss_fn() with respect to every entry of every parameter."""
    numeric: dict[str, np.ndarray] = {}
    for name, tensor in params.tensors.items():
        flat = tensor.data.reshape(-1)
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            upper = loss_fn().item()
            flat[i] = original - step
            lower = loss_fn().item()
            flat[i] = original
            grad[i] = (upper - lower) / (2.0 * step)
        numeric[name] = grad.reshape(tensor.shape)
    return numeric


def compare_gradients(
    analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray], tolerance: float, floor: float = 1e-3
) -> GradCheckReport:
    """Worst |a - n| / max(|a|, |n|, floor) over all entries, reported per block."""
    block_errors: dict[str, float] = {}
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        block_errors[name] = float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
    worst = max(block_errors, key=lambda k: block_errors[k]) if block_errors else ""
    return GradCheckReport(
        max_rel_error=block_errors.get(worst, 0.0),
        worst_block=worst,
        tolerance=tolerance,
        block_errors=block_errors,
    )


def grad_check(spec: MlpSpec, seed: int, tolerance: float, batch: int = 4, step: float = 1e-5) -> GradCheckReport:
    """Compare backward() with central differences on a random squared-error loss."""
    if tolerance <= 0:
        raise PreconditionError("tolerance must be positive")
    rng = NoiseSource(seed)
    arrays = init_mlp(spec, rng)
    for name in arrays:
        # Move layer-norm and bias parameters off their special initial values.
        if not name.endswith(".weight"):
            arrays[name] = arrays[name] + 0.1 * rng.normal(arrays[name].shape)
    params = ParamStore(arrays)
    if params.num_parameters() > 10_000:
        logger.warning(f"grad_check on {params.num_parameters()} parameters will be slow")
    inputs = rng.normal((batch, spec.input_dim))
    targets = rng.normal((batch, spec.output_dim))

    def loss_fn() -> Tensor:
        residual = mlp_forward(params, spec, inputs) - targets
        return (residual * residual).mean()

    backward(loss_fn())
    analytic = {name: grad.copy() for name, grad in params.grads().items() if grad is not None}
    numeric = finite_difference_gradients(params, loss_fn, step)
    report = compare_gradients(analytic, numeric, tolerance)
    logger.info(f"grad_check seed={seed}: max relative error {report.max_rel_error:.3e} in {report.worst_block}")
    return report
