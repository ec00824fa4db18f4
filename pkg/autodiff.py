"""
Dense float64 tensors with reverse-mode automatic differentiation.

Each operation executed while recording is enabled stores references to its
inputs and a backward rule. ``Tensor.backward()`` on a scalar result visits
the recorded operations in reverse topological order, accumulates gradients
into every tensor that requires them, then releases the graph.

Binary operations accept two tensors of identical shape, or a tensor and a
scalar (a Python number or a 0-d tensor). Anything else has to go through
``broadcast_to`` explicitly.
"""
import contextlib
import logging
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import AutodiffUsageError, DimensionError, NumericDomainError

logger = logging.getLogger(__name__)

Number = Union[int, float]

_grad_enabled = True
_check_finite = False


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them for backward."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def set_debug_checks(enabled: bool) -> None:
    """Raise NumericDomainError as soon as any forward result is not finite."""
    global _check_finite
    _check_finite = enabled


class Tensor:
    """A float64 array that can take part in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_consumed")
    __array_ufunc__ = None  # ndarray (op) Tensor defers to Tensor's reflected operators

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._consumed = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def abs(self) -> "Tensor":
        return abs_(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    # -- backward ------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self._consumed:
            raise AutodiffUsageError(
                "backward() was already called on this graph; run a new forward pass first"
            )
        if self.data.ndim != 0:
            raise AutodiffUsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise AutodiffUsageError("loss does not depend on any tensor that requires a gradient")

        order = _topological_order(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = np.array(parent_grad, dtype=np.float64)

        for node in order:
            if node._backward is not None:
                node._consumed = True
                node._parents = ()
                node._backward = None


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
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


def parameter(data, name: Optional[str] = None) -> Tensor:
    """Create a trainable leaf owning a private copy of ``data``."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if _check_finite and not np.all(np.isfinite(data)):
        raise NumericDomainError(f"{op} produced a non-finite value")
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _binary_operands(a, b, op: str) -> Tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(
            f"{op}: shapes {a.shape} and {b.shape} differ; only same-shape or scalar operands are supported"
        )
    return a, b


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if shape == () and grad.shape != ():
        return np.asarray(grad.sum())
    return grad


# -- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "add")

    def _backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _result(a.data + b.data, (a, b), _backward, "add")


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "sub")

    def _backward(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _result(a.data - b.data, (a, b), _backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "mul")

    def _backward(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), _backward, "mul")


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b, "div")
    if np.any(b.data == 0):
        raise NumericDomainError("div: division by zero")

    def _backward(g):
        return (
            _reduce_to(g / b.data, a.shape),
            _reduce_to(-g * a.data / (b.data * b.data), b.shape),
        )

    return _result(a.data / b.data, (a, b), _backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def abs_(a) -> Tensor:
    """|a|, with subgradient 0 at a == 0."""
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return _result(out_data, (a,), lambda g: (g * out_data,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NumericDomainError("log: argument must be strictly positive")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def pow(base, exponent) -> Tensor:
    """base ** exponent for a tensor or scalar exponent.

    Negative bases are rejected unless the exponent is a plain integer; a
    zero base needs a positive exponent. The exponent gradient at a zero
    base is taken as its limit, 0.
    """
    exponent_is_number = isinstance(exponent, (int, float)) and not isinstance(exponent, bool)
    base, exponent = _binary_operands(base, exponent, "pow")
    b, e = base.data, exponent.data
    integral = exponent_is_number and float(e) == int(e)
    if not integral and np.any(b < 0):
        raise NumericDomainError("pow: negative base with a non-integer or learnable exponent")
    if np.any((b == 0) & (e <= 0)):
        raise NumericDomainError("pow: zero base with a non-positive exponent")
    out_data = np.power(b, e)

    def _backward(g):
        grad_base = grad_exp = None
        if base.requires_grad:
            grad_base = _reduce_to(g * e * np.power(b, e - 1.0), base.shape)
        if exponent.requires_grad:
            safe = np.where(b > 0, b, 1.0)
            grad_exp = _reduce_to(g * np.where(b > 0, out_data * np.log(safe), 0.0), exponent.shape)
        return grad_base, grad_exp

    return _result(out_data, (base, exponent), _backward, "pow")


def clamp(a, low: float, high: float) -> Tensor:
    """Clip to [low, high]; the gradient passes only where the input is inside."""
    a = as_tensor(a)
    inside = (a.data >= low) & (a.data <= high)
    return _result(np.clip(a.data, low, high), (a,), lambda g: (g * inside,), "clamp")


# -- reductions and shape ops --------------------------------------------

def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _result(out_data, (a,), _backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(sum_(a, axes, keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out_data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}")
    return _result(out_data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def _backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), _backward, "slice")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise DimensionError(f"concat: incompatible shapes {shapes} along axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out_data, tensors, _backward, "concat")


def broadcast_to(a, shape) -> Tensor:
    """Explicitly repeat ``a`` along new leading axes or axes of size 1."""
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out_data = np.array(np.broadcast_to(a.data, shape))
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {a.shape} to {shape}")
    lead = len(shape) - a.ndim

    def _backward(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        axes = tuple(i for i, size in enumerate(a.shape) if size == 1 and shape[lead + i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return _result(out_data, (a,), _backward, "broadcast_to")


# -- linear algebra ------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes must agree exactly."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def _backward(g):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return grad_a, grad_b

    return _result(np.matmul(a.data, b.data), (a, b), _backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """x[..., in] @ weight[in, out] + bias[out]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out_data = x.data @ weight.data
    if bias is not None:
        out_data = out_data + bias.data
    flat_x = x.data.reshape(-1, weight.shape[0])

    def _backward(g):
        flat_g = g.reshape(-1, weight.shape[1])
        grad_x = (g @ weight.data.T) if x.requires_grad else None
        grad_w = (flat_x.T @ flat_g) if weight.requires_grad else None
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, flat_g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out_data, parents, _backward, "linear")


# -- neural network primitives ---------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (out_data * (g - (g * out_data).sum(axis=axis, keepdims=True)),)

    return _result(out_data, (a,), _backward, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out_data)

    def _backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _result(out_data, (a,), _backward, "log_softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(f"layer_norm: affine shapes {gain.shape}/{bias.shape} do not match {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    out_data = x_hat * gain.data + bias.data

    def _backward(g):
        lead = tuple(range(g.ndim - 1))
        d_hat = g * gain.data
        grad_x = (inv_std / width) * (
            width * d_hat
            - d_hat.sum(axis=-1, keepdims=True)
            - x_hat * (d_hat * x_hat).sum(axis=-1, keepdims=True)
        )
        return grad_x, (g * x_hat).sum(axis=lead), g.sum(axis=lead)

    return _result(out_data, (x, gain, bias), _backward, "layer_norm")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    out_data = 0.5 * x * (1.0 + t)

    def _backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return _result(out_data, (a,), _backward, "gelu")


def dropout(a, rate: float, rng: Optional[np.random.Generator], train_mode: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    a = as_tensor(a)
    if not train_mode or rate <= 0.0:
        return a
    if rng is None:
        raise AutodiffUsageError("dropout in training mode needs a random generator")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "dropout")
