"""
Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op builds its output eagerly with numpy and, when any input requires a
gradient, records a `Node` holding the op's vector-Jacobian product. Calling
`Tensor.backward()` on a scalar collects the nodes reachable from it into a
`ComputeGraph`, visits them once in reverse topological order and
accumulates gradients into the leaves. A graph is consumed by its backward
pass; running backward over it again raises `GraphError`.
"""

import contextlib
import contextvars
import logging
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.errors import GraphError, ShapeError

logger = logging.getLogger("ChargeCast")

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_grad_enabled: contextvars.ContextVar = contextvars.ContextVar("chargecast_grad_enabled", default=True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference, metric passes)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@dataclass(eq=False)
class Node:
    """One recorded op: its kind, its inputs and the VJP producing input grads."""

    op: str
    inputs: Tuple["Tensor", ...]
    backward_fn: Optional[BackwardFn]
    consumed: bool = False


class Tensor:
    """A float64 array that optionally tracks gradients."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[Node] = None

    # ----- construction from ops -----

    @classmethod
    def _from_op(cls, data: np.ndarray, op: str, inputs: Sequence["Tensor"], backward_fn: BackwardFn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.name = None
        track = is_grad_enabled() and any(t.requires_grad for t in inputs)
        out.requires_grad = track
        out._node = Node(op, tuple(inputs), backward_fn) if track else None
        return out

    # ----- introspection -----

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # ----- gradients -----

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=np.float64).reshape(self.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        """Populate `.grad` on every requires-grad leaf reachable from this scalar."""
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._node is None:
            if self.requires_grad:
                self._accumulate(np.ones_like(self.data))
                return
            raise GraphError("loss is not attached to a live graph (nothing requires grad)")
        ComputeGraph.from_loss(self).run()

    # ----- operator sugar -----

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: float) -> "Tensor":
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by Python scalars")
        return mul(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key) -> "Tensor":
        return index(self, key)

    def relu(self) -> "Tensor":
        return relu(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class ComputeGraph:
    """Topologically ordered op records reachable from one scalar loss."""

    def __init__(self, root: Tensor, order: List[Tensor]):
        self.root = root
        self.order = order
        self.valid = True

    @classmethod
    def from_loss(cls, loss: Tensor) -> "ComputeGraph":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            node = tensor._node
            if node is None:
                continue
            if node.consumed:
                raise GraphError(
                    f"stale tape: op '{node.op}' was consumed by an earlier backward pass; rerun the forward pass"
                )
            stack.append((tensor, True))
            for parent in node.inputs:
                if parent._node is not None and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(loss, order)

    def __len__(self) -> int:
        return len(self.order)

    def run(self) -> None:
        if not self.valid:
            raise GraphError("this graph has already been differentiated")
        pending = {id(self.root): np.ones_like(self.root.data)}
        for tensor in reversed(self.order):
            node = tensor._node
            grad = pending.pop(id(tensor), None)
            if grad is None:
                grad = np.zeros_like(tensor.data)
            input_grads = node.backward_fn(grad)
            for parent, parent_grad in zip(node.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent._node is None:
                    parent._accumulate(parent_grad)
                elif id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + parent_grad
                else:
                    pending[id(parent)] = np.asarray(parent_grad, dtype=np.float64).reshape(parent.shape)
            node.consumed = True
            node.backward_fn = None
        self.valid = False


# ==================== HELPERS ====================

def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ==================== ELEMENTWISE ====================

def add(a: Union[Tensor, ArrayLike], b: Union[Tensor, ArrayLike]) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast(a, b, "add")

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, "add", (a, b), backward)


def sub(a: Union[Tensor, ArrayLike], b: Union[Tensor, ArrayLike]) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast(a, b, "sub")

    def backward(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, "sub", (a, b), backward)


def mul(a: Union[Tensor, ArrayLike], b: Union[Tensor, ArrayLike]) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast(a, b, "mul")

    def backward(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, "mul", (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g: np.ndarray):
        return (-g,)

    return Tensor._from_op(-a.data, "neg", (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def backward(g: np.ndarray):
        return (np.where(mask, g, 0.0),)

    return Tensor._from_op(np.where(mask, a.data, 0.0), "relu", (a,), backward)


def dropout(a: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not training or rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def backward(g: np.ndarray):
        return (g * mask,)

    return Tensor._from_op(a.data * mask, "dropout", (a,), backward)


# ==================== LINEAR ALGEBRA ====================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")

    def backward(g: np.ndarray):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return Tensor._from_op(np.matmul(a.data, b.data), "matmul", (a, b), backward)


def causal_conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor], dilation: int) -> Tensor:
    """
    Dilated causal convolution along the time axis.

    Args:
        x: (..., T, C_in) input
        weight: (k, C_in, C_out) taps; tap i multiplies x[s - dilation * i]
        bias: (C_out,) or None
        dilation: spacing between taps (>= 1)

    Returns:
        (..., T, C_out); position s only reads positions <= s (implicit zero left-padding)
    """
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if weight.ndim != 3 or x.ndim < 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"causal_conv1d: input {x.shape} does not match weight {weight.shape}")
    kernel = weight.shape[0]
    steps = x.shape[-2]
    padded_length = steps + (kernel - 1) * dilation
    span = (kernel - 1) * dilation + 1
    if span > padded_length:
        raise ShapeError(f"causal_conv1d: kernel span {span} exceeds padded length {padded_length}")

    out = np.zeros(x.shape[:-1] + (weight.shape[2],), dtype=np.float64)
    for tap in range(kernel):
        lag = tap * dilation
        if lag >= steps:
            break
        out[..., lag:, :] += np.matmul(x.data[..., : steps - lag, :], weight.data[tap])
    if bias is not None:
        out += bias.data

    inputs: Tuple[Tensor, ...] = (x, weight) if bias is None else (x, weight, bias)

    def backward(g: np.ndarray):
        grad_x = np.zeros_like(x.data)
        grad_w = np.zeros_like(weight.data)
        c_in, c_out = weight.shape[1], weight.shape[2]
        for tap in range(kernel):
            lag = tap * dilation
            if lag >= steps:
                break
            g_slice = g[..., lag:, :]
            grad_x[..., : steps - lag, :] += np.matmul(g_slice, weight.data[tap].T)
            x_rows = x.data[..., : steps - lag, :].reshape(-1, c_in)
            grad_w[tap] = x_rows.T @ g_slice.reshape(-1, c_out)
        grads: List[np.ndarray] = [grad_x, grad_w]
        if bias is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return grads

    return Tensor._from_op(out, "causal_conv1d", inputs, backward)


# ==================== SHAPE OPS ====================

def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None

    def backward(g: np.ndarray):
        return (g.reshape(a.shape),)

    return Tensor._from_op(data, "reshape", (a,), backward)


def index(a: Tensor, key) -> Tensor:
    """Basic or integer-array indexing (e.g. a slice along the time axis)."""
    data = a.data[key]
    advanced = any(isinstance(k, (list, np.ndarray)) for k in (key if isinstance(key, tuple) else (key,)))

    def backward(g: np.ndarray):
        full = np.zeros_like(a.data)
        if advanced:
            np.add.at(full, key, g)
        else:
            full[key] += g
        return (full,)

    return Tensor._from_op(np.array(data, dtype=np.float64), "index", (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along `axis` (time or channel)."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no tensors given")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}") from None
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray):
        return np.split(g, cuts, axis=axis)

    return Tensor._from_op(data, "concat", tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Stack equally shaped tensors along a new axis."""
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim + 1
    axis = axis % ndim
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# ==================== REDUCTIONS ====================

def _normalize_axes(axis, ndim: int) -> Optional[Tuple[int, ...]]:
    if axis is None:
        return None
    axes = axis if isinstance(axis, (tuple, list)) else (axis,)
    return tuple(sorted(ax % ndim for ax in axes))


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g: np.ndarray):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(data, "sum", (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = a.size if axes is None else int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tensor_sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


# ==================== LOOKUPS ====================

def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of `table` by integer index; gradients scatter-add back."""
    indices = np.asarray(indices)
    if not np.issubdtype(indices.dtype, np.integer):
        raise ShapeError(f"embedding indices must be integers, got {indices.dtype}")
    vocab = table.shape[0]
    if indices.size and (indices.min() < 0 or indices.max() >= vocab):
        raise ShapeError(f"embedding index out of range [0, {vocab}): min={indices.min()}, max={indices.max()}")

    def backward(g: np.ndarray):
        grad = np.zeros_like(table.data)
        np.add.at(grad, indices, g)
        return (grad,)

    return Tensor._from_op(table.data[indices], "embedding", (table,), backward)
