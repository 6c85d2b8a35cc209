"""
Dense tensors with define-by-run reverse-mode differentiation.

A `GradTape` records every operation applied to tracked tensors in execution
order. `backward` replays the records in reverse and accumulates gradients
for every leaf that was watched on the tape. Tensors that are not on a tape
are plain immutable value holders and can be shared between threads.

Broadcasting is deliberately narrow: two operands broadcast only when their
shapes are equal, when one of them is a scalar, or when the shape of one is
a trailing suffix of the other (e.g. [B,T,D] with [D]).
"""

from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import DomainError, NumericError, ShapeError

DEFAULT_DTYPE = np.float64

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class _Record(NamedTuple):
    inputs: Tuple[Optional[int], ...]
    output: int
    backward: BackwardRule


class GradTape:
    """Ordered list of differentiable operations for one forward pass."""

    def __init__(self):
        self.records: List[_Record] = []
        self.leaves: Dict[int, "Tensor"] = {}
        self._next_node = 0

    def _new_node(self) -> int:
        node = self._next_node
        self._next_node += 1
        return node

    def watch(self, values: ArrayLike, name: Optional[str] = None, dtype=None) -> "Tensor":
        """Create a tracked leaf tensor whose gradient `backward` will populate."""
        array = values.values if isinstance(values, Tensor) else values
        leaf = Tensor(array, dtype=dtype, name=name)
        leaf.tape = self
        leaf.node = self._new_node()
        self.leaves[leaf.node] = leaf
        return leaf

    def record(
        self, inputs: Sequence["Tensor"], values: np.ndarray, backward: BackwardRule
    ) -> "Tensor":
        out = Tensor._wrap(values)
        out.tape = self
        out.node = self._new_node()
        self.records.append(
            _Record(tuple(t.node if t.tape is self else None for t in inputs), out.node, backward)
        )
        return out

    def backward(self, loss: "Tensor") -> Dict[int, np.ndarray]:
        """Populate `.grad` on every leaf of this tape and return grads keyed by node."""
        if loss.values.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

        grads: Dict[int, np.ndarray] = {}
        if loss.tape is self:
            grads[loss.node] = np.ones_like(loss.values)

        for record in reversed(self.records):
            grad = grads.get(record.output)
            if grad is None:
                continue
            for node, input_grad in zip(record.inputs, record.backward(grad)):
                if node is None or input_grad is None:
                    continue
                if node in grads:
                    grads[node] = grads[node] + input_grad
                else:
                    grads[node] = input_grad

        result = {}
        for node, leaf in self.leaves.items():
            leaf.grad = grads.get(node, np.zeros_like(leaf.values))
            result[node] = leaf.grad
        return result


class Tensor:
    """Dense n-dimensional float array, optionally tracked on a `GradTape`."""

    __slots__ = ("values", "tape", "node", "grad", "name")

    def __init__(self, values: ArrayLike, dtype=None, name: Optional[str] = None):
        if isinstance(values, Tensor):
            values = values.values
        if dtype is None:
            is_float = isinstance(values, np.ndarray) and np.issubdtype(values.dtype, np.floating)
            dtype = values.dtype if is_float else DEFAULT_DTYPE
        self.values = np.array(values, dtype=dtype)
        self.tape: Optional[GradTape] = None
        self.node: Optional[int] = None
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def _wrap(cls, values: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.values = values
        out.tape = None
        out.node = None
        out.grad = None
        out.name = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        tracked = f", node={self.node}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tracked})"

    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", other, self)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", other, self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", other, self)

    def __neg__(self):
        return elementwise("neg", self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None and not isinstance(value, np.ndarray) else None
    return Tensor(value, dtype=dtype)


def _tape_of(*tensors: Tensor) -> Optional[GradTape]:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is not None and t.tape is not tape:
            raise NumericError("tensors from different tapes cannot be combined")
        tape = t.tape
    return tape


def _finish(inputs: Sequence[Tensor], values: np.ndarray, backward: BackwardRule, op: str) -> Tensor:
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{op} produced non-finite values")
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor._wrap(values)
    return tape.record(inputs, values, backward)


def _is_scalar(shape: Tuple[int, ...]) -> bool:
    return len(shape) == 0 or (len(shape) == 1 and shape[0] == 1)


def _broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    if a == b:
        return a
    if _is_scalar(b):
        return a
    if _is_scalar(a):
        return b
    if len(b) < len(a) and a[len(a) - len(b):] == b:
        return a
    if len(a) < len(b) and b[len(b) - len(a):] == a:
        return b
    raise ShapeError(f"shapes {a} and {b} are not broadcast-compatible")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if _is_scalar(shape):
        return np.asarray(grad.sum()).reshape(shape)
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead)))


_UNARY = ("neg", "exp", "log")
_BINARY = ("add", "sub", "mul")


def elementwise(kind: str, a, b=None) -> Tensor:
    """Apply add|sub|mul|neg|exp|log elementwise."""
    if kind in _UNARY:
        if b is not None:
            raise ShapeError(f"{kind} takes a single operand")
        a = as_tensor(a)
        x = a.values
        if kind == "neg":
            return _finish([a], -x, lambda g: (-g,), kind)
        if kind == "exp":
            y = np.exp(x)
            return _finish([a], y, lambda g: (g * y,), kind)
        if np.any(x <= 0):
            raise DomainError("log of a non-positive value")
        return _finish([a], np.log(x), lambda g: (g / x,), kind)

    if kind not in _BINARY:
        raise ValueError(f"unknown elementwise op '{kind}'")
    if b is None:
        raise ShapeError(f"{kind} needs two operands")
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _broadcast_shape(a.shape, b.shape)
    x, y = a.values, b.values
    sa, sb = a.shape, b.shape

    if kind == "add":
        return _finish([a, b], x + y, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), kind)
    if kind == "sub":
        return _finish([a, b], x - y, lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), kind)
    return _finish(
        [a, b], x * y, lambda g: (_unbroadcast(g * y, sa), _unbroadcast(g * x, sb)), kind
    )


def add(a, b) -> Tensor:
    return elementwise("add", a, b)


def sub(a, b) -> Tensor:
    return elementwise("sub", a, b)


def mul(a, b) -> Tensor:
    return elementwise("mul", a, b)


def neg(a) -> Tensor:
    return elementwise("neg", a)


def exp(a) -> Tensor:
    return elementwise("exp", a)


def log(a) -> Tensor:
    return elementwise("log", a)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product over the last two axes.

    `a` may carry leading batch dims. `b` either carries the same leading dims
    or is a plain matrix shared across the batch (the usual weight case).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    shared_b = b.ndim == 2
    if not shared_b and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}")

    x, y = a.values, b.values

    def backward(g):
        grad_a = g @ np.swapaxes(y, -1, -2)
        if shared_b:
            grad_b = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            grad_b = np.swapaxes(x, -1, -2) @ g
        return grad_a, grad_b

    return _finish([a, b], x @ y, backward, "matmul")


def log_sigmoid_values(x: np.ndarray) -> np.ndarray:
    """Stable log sigmoid on raw arrays (branch form, no overflow)."""
    x = np.asarray(x, dtype=np.result_type(x, np.float32))
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = -np.log1p(np.exp(-x[pos]))
    neg_ = ~pos
    out[neg_] = x[neg_] - np.log1p(np.exp(x[neg_]))
    return out


def log_sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # d/dx log sigmoid(x) = sigmoid(-x)
    return _finish(
        [x], log_sigmoid_values(x.values), lambda g: (g * np.exp(log_sigmoid_values(-x.values)),), "log_sigmoid"
    )


def log_softmax_values(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for shape {x.shape}")
    y = log_softmax_values(x.values, axis)

    def backward(g):
        return (g - np.exp(y) * np.sum(g, axis=axis, keepdims=True),)

    return _finish([x], y, backward, "log_softmax")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    y = np.exp(log_softmax_values(x.values, axis))

    def backward(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _finish([x], y, backward, "softmax")


def gather_last(t: Tensor, idx) -> Tensor:
    """Select one entry per position along the last axis: out[...] = t[..., idx[...]]."""
    t = as_tensor(t)
    idx = np.asarray(idx)
    if idx.shape != t.shape[:-1]:
        raise ShapeError(f"index shape {idx.shape} does not match {t.shape[:-1]}")
    if not np.issubdtype(idx.dtype, np.integer):
        raise DomainError("gather indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= t.shape[-1]):
        raise DomainError(f"gather index out of range [0, {t.shape[-1]})")
    expanded = idx[..., None]
    out = np.take_along_axis(t.values, expanded, axis=-1)[..., 0]

    def backward(g):
        grad = np.zeros_like(t.values)
        np.put_along_axis(grad, expanded, g[..., None], axis=-1)
        return (grad,)

    return _finish([t], out, backward, "gather_last")


def reduce_sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        g = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _finish([x], np.sum(x.values, axis=axis, keepdims=keepdims), backward, "sum")


def reduce_mean(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.values.size if axis is None else x.shape[axis]
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    original = x.shape
    return _finish([x], x.values.reshape(shape), lambda g: (g.reshape(original),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return _finish([x], np.transpose(x.values, axes), lambda g: (np.transpose(g, inverse),), "transpose")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    active = x.values > 0
    return _finish([x], np.where(active, x.values, 0.0), lambda g: (g * active,), "relu")


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); the gradient is zero wherever the floor is active."""
    x = as_tensor(x)
    passed = x.values > floor
    return _finish([x], np.maximum(x.values, floor), lambda g: (g * passed,), "clamp_min")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    _broadcast_shape(x.shape, gain.shape)
    mean = x.values.mean(axis=-1, keepdims=True)
    centered = x.values - mean
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std
    out = normed * gain.values + bias.values

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        grad_gain = (g * normed).sum(axis=lead)
        grad_bias = g.sum(axis=lead)
        d_normed = g * gain.values
        grad_x = inv_std * (
            d_normed
            - d_normed.mean(axis=-1, keepdims=True)
            - normed * (d_normed * normed).mean(axis=-1, keepdims=True)
        )
        return grad_x, grad_gain, grad_bias

    return _finish([x, gain, bias], out, backward, "layer_norm")


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup table[ids]; the backward pass scatter-adds into the table."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DomainError(f"embedding id out of range [0, {table.shape[0]})")

    def backward(g):
        grad = np.zeros_like(table.values)
        np.add.at(grad, ids, g)
        return (grad,)

    return _finish([table], table.values[ids], backward, "embedding")


def add_mask(x: Tensor, mask_bias: np.ndarray) -> Tensor:
    """Add an untracked bias (e.g. -1e9 on masked attention keys) broadcast onto x."""
    x = as_tensor(x)
    out = x.values + mask_bias
    if out.shape != x.shape:
        raise ShapeError(f"mask of shape {np.shape(mask_bias)} changes shape {x.shape}")
    return _finish([x], out, lambda g: (g,), "add_mask")


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, Tensor._wrap(keep))


def backward(loss: Tensor, tape: Optional[GradTape] = None) -> Dict[int, np.ndarray]:
    """Run reverse-mode differentiation from a scalar loss.

    A loss that is not on any tape (a constant) yields zero gradients for every
    leaf of `tape`.
    """
    loss = as_tensor(loss)
    if loss.values.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape or tape
    if tape is None:
        raise NumericError("loss is not recorded on a tape")
    return tape.backward(loss)


def finite_diff_grad(f: Callable[[Tensor], Union[Tensor, float]], x, eps: float = 1e-6) -> Tensor:
    """Central-difference gradient of a tensor-to-scalar function, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.array(as_tensor(x).values, dtype=np.float64)
    grad = np.zeros_like(base)

    def evaluate(values):
        out = f(Tensor(values))
        return out.item() if isinstance(out, Tensor) else float(out)

    for index in np.ndindex(base.shape):
        plus = base.copy()
        plus[index] += eps
        minus = base.copy()
        minus[index] -= eps
        grad[index] = (evaluate(plus) - evaluate(minus)) / (2.0 * eps)
    return Tensor(grad)
