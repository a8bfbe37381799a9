"""
Reverse-mode automatic differentiation over small dense float64 arrays.

A ``Value`` wraps an immutable (read-only) numpy array. Operations create new
Values that remember their parents and a backward rule; ``backward`` walks the
graph in reverse creation order. Parameters are leaf Values with
``requires_grad=True``; their data is swapped wholesale (never mutated) by the
optimizer.
"""

import itertools
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from icred.errors import ContractError, DimensionError, DomainError, NumericalError

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# Creation order; parents always get a smaller index than their children.
_counter = itertools.count()


def make_tensor(data: ArrayLike, shape: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Build an immutable float64 array, rejecting NaN and Inf.

    Args:
        data: Array-like values (row-major when reshaped)
        shape: Optional target shape

    Returns:
        Read-only contiguous float64 array
    """
    array = np.array(data, dtype=np.float64, copy=True)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise DimensionError(f"shape entries must be positive, got {shape}")
        if array.size != int(np.prod(shape)):
            raise DimensionError(f"{array.size} values do not fill shape {shape}")
        array = array.reshape(shape)
    if not np.isfinite(array).all():
        raise NumericalError("tensor contains NaN or Inf")
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


class Value:
    """A node in the differentiation graph."""

    __slots__ = ("data", "parents", "op", "name", "requires_grad", "index", "_grad", "_backward")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = make_tensor(data)
        self.parents: Tuple["Value", ...] = ()
        self.op = "leaf"
        self.name = name
        self.requires_grad = requires_grad
        self.index = next(_counter)
        self._grad: Optional[np.ndarray] = None
        self._backward: Optional[BackwardRule] = None

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Value"],
        op: str,
        backward: BackwardRule
    ) -> "Value":
        """
        Create an interior node.

        Args:
            data: Forward result
            parents: Inputs, in the order ``backward`` returns their gradients
            op: Operation tag (for diagnostics)
            backward: Maps the output gradient to one gradient per parent

        Raises:
            NumericalError: The forward result is not finite
        """
        out = cls.__new__(cls)
        if not np.isfinite(data).all():
            raise NumericalError(f"non-finite values produced by '{op}'")
        data = np.asarray(data, dtype=np.float64)
        data.setflags(write=False)
        out.data = data
        out.parents = tuple(parents)
        out.op = op
        out.name = None
        out.requires_grad = any(p.requires_grad for p in out.parents)
        out.index = next(_counter)
        out._grad = None
        out._backward = backward
        return out

    # --- convenience ---
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def grad(self) -> np.ndarray:
        """Accumulated gradient; zero until a backward pass reaches this leaf."""
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self._grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise DimensionError(f"gradient shape {grad.shape} != value shape {self.shape}")
        self._grad = grad.copy() if self._grad is None else self._grad + grad

    def assign(self, data: ArrayLike) -> None:
        """Replace a leaf's data with a new tensor of the same shape."""
        if self.parents:
            raise ContractError("only leaf values can be reassigned")
        new = make_tensor(data)
        if new.shape != self.data.shape:
            raise DimensionError(f"cannot assign shape {new.shape} to {self.name or 'value'} {self.shape}")
        self.data = new

    def __repr__(self) -> str:
        label = f", name={self.name}" if self.name else ""
        return f"Value(shape={self.shape}, op={self.op}{label})"

    # --- operators ---
    def __add__(self, other: Union["Value", float]) -> "Value":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Union["Value", float]) -> "Value":
        return add(self, neg(_coerce(other)))

    def __rsub__(self, other: Union["Value", float]) -> "Value":
        return add(_coerce(other), neg(self))

    def __mul__(self, other: Union["Value", float]) -> "Value":
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Value":
        return neg(self)

    def __matmul__(self, other: "Value") -> "Value":
        return matmul(self, other)


def _coerce(x: Union[Value, ArrayLike]) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g_dim, s_dim) in enumerate(zip(grad.shape, shape)):
        if s_dim == 1 and g_dim != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def constant(data: ArrayLike) -> Value:
    """A leaf that never receives gradients."""
    return Value(data, requires_grad=False)


def zeros(size: int) -> Value:
    return Value(np.zeros(size), requires_grad=False)


def parameter(data: ArrayLike, name: str) -> Value:
    return Value(data, requires_grad=True, name=name)


# ============================================================================
# ELEMENTWISE
# ============================================================================

def add(a: Value, b: Union[Value, float]) -> Value:
    b = _coerce(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Value.from_op(out, (a, b), "add", backward)


def mul(a: Value, b: Union[Value, float]) -> Value:
    b = _coerce(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Value.from_op(out, (a, b), "mul", backward)


def neg(a: Value) -> Value:
    return Value.from_op(-a.data, (a,), "neg", lambda g: (-g,))


def scale(a: Value, factor: float) -> Value:
    """Multiply by a Python scalar without putting it on the tape."""
    factor = float(factor)
    return Value.from_op(a.data * factor, (a,), "scale", lambda g: (g * factor,))


def tanh(a: Value) -> Value:
    y = np.tanh(a.data)
    return Value.from_op(y, (a,), "tanh", lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Value) -> Value:
    y = special.expit(a.data)
    return Value.from_op(y, (a,), "sigmoid", lambda g: (g * y * (1.0 - y),))


def exp(a: Value) -> Value:
    y = np.exp(a.data)
    return Value.from_op(y, (a,), "exp", lambda g: (g * y,))


def log(a: Value) -> Value:
    if (a.data <= 0).any():
        raise DomainError("log of non-positive value")
    x = a.data
    return Value.from_op(np.log(x), (a,), "log", lambda g: (g / x,))


# ============================================================================
# LINEAR ALGEBRA
# ============================================================================

def matmul(a: Value, b: Value) -> Value:
    """
    Matrix/vector products for 1-D and 2-D operands.

    Raises:
        DimensionError: Inner dimensions disagree or operands are not 1-D/2-D
    """
    A, B = a.data, b.data
    if A.ndim not in (1, 2) or B.ndim not in (1, 2):
        raise DimensionError(f"matmul supports 1-D/2-D operands, got {A.shape} @ {B.shape}")
    if A.shape[-1] != B.shape[0]:
        raise DimensionError(f"inner dims mismatch: {A.shape} @ {B.shape}")
    out = A @ B

    def backward(g):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:  # matrix @ vector
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:  # vector @ matrix
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return Value.from_op(out, (a, b), "matmul", backward)


def concat(values: Sequence[Value]) -> Value:
    """Concatenate vectors end to end."""
    if not values:
        raise DomainError("concat of nothing")
    if any(v.data.ndim != 1 for v in values):
        raise DimensionError("concat expects vectors")
    sizes = [v.size for v in values]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return np.split(g, bounds)

    return Value.from_op(np.concatenate([v.data for v in values]), values, "concat", backward)


def stack_columns(values: Sequence[Value]) -> Value:
    """Stack equal-length vectors as the columns of a matrix."""
    if not values:
        raise DomainError("stack of nothing")
    size = values[0].size
    if any(v.data.ndim != 1 or v.size != size for v in values):
        raise DimensionError("stack_columns expects vectors of one length")

    def backward(g):
        return [g[:, i] for i in range(len(values))]

    return Value.from_op(np.stack([v.data for v in values], axis=1), values, "stack", backward)


def hconcat(matrices: Sequence[Value]) -> Value:
    """Concatenate matrices along their column axis."""
    if not matrices:
        raise DomainError("hconcat of nothing")
    rows = matrices[0].shape[0]
    if any(m.data.ndim != 2 or m.shape[0] != rows for m in matrices):
        raise DimensionError("hconcat expects matrices with equal row counts")
    bounds = np.cumsum([m.shape[1] for m in matrices])[:-1]

    def backward(g):
        return np.split(g, bounds, axis=1)

    return Value.from_op(np.concatenate([m.data for m in matrices], axis=1), matrices, "hconcat", backward)


def take_rows(matrix: Value, indices: Sequence[int]) -> Value:
    """Gather rows (embedding lookup); returns a (len(indices), cols) matrix."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise DomainError("take_rows needs a non-empty index list")
    if idx.min() < 0 or idx.max() >= matrix.shape[0]:
        raise DimensionError(f"row index out of range for {matrix.shape}")

    def backward(g):
        full = np.zeros_like(matrix.data)
        np.add.at(full, idx, g)
        return (full,)

    return Value.from_op(matrix.data[idx], (matrix,), "take_rows", backward)


def row(matrix: Value, i: int) -> Value:
    """Select one row of a matrix as a vector."""

    def backward(g):
        full = np.zeros_like(matrix.data)
        full[i] = g
        return (full,)

    return Value.from_op(matrix.data[i], (matrix,), "row", backward)


# ============================================================================
# REDUCTIONS
# ============================================================================

def vsum(a: Value) -> Value:
    """Sum of all entries (scalar)."""
    shape = a.shape
    return Value.from_op(np.asarray(a.data.sum()), (a,), "sum", lambda g: (np.broadcast_to(g, shape).copy(),))


def sum_squares(a: Value) -> Value:
    """Squared Frobenius norm (scalar)."""
    x = a.data
    return Value.from_op(np.asarray(np.sum(x * x)), (a,), "sum_squares", lambda g: (2.0 * g * x,))


def mean(values: Sequence[Value]) -> Value:
    """Arithmetic mean of scalar Values."""
    if not values:
        raise DomainError("mean of nothing")
    n = len(values)
    total = np.asarray(sum(float(v.data) for v in values) / n)

    def backward(g):
        return [np.asarray(g / n) for _ in values]

    return Value.from_op(total, values, "mean", backward)


def max_columns(matrix: Value) -> Value:
    """Per-row maximum over the columns (max-pooling); ties go to the first column."""
    X = matrix.data
    arg = np.argmax(X, axis=1)
    rows = np.arange(X.shape[0])

    def backward(g):
        full = np.zeros_like(X)
        full[rows, arg] = g
        return (full,)

    return Value.from_op(X[rows, arg], (matrix,), "max_columns", backward)


# ============================================================================
# PROBABILITIES
# ============================================================================

def softmax(scores: Value) -> Value:
    """
    Normalized exponentials of a score vector.

    Raises:
        DomainError: Empty input
    """
    if scores.size == 0:
        raise DomainError("softmax of an empty vector")
    p = special.softmax(scores.data)

    def backward(g):
        return (p * (g - np.dot(g, p)),)

    return Value.from_op(p, (scores,), "softmax", backward)


def log_softmax(scores: Value) -> Value:
    if scores.size == 0:
        raise DomainError("log_softmax of an empty vector")
    y = special.log_softmax(scores.data)
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(),)

    return Value.from_op(y, (scores,), "log_softmax", backward)


def nll(logits: Value, target: int) -> Value:
    """Negative log-probability of ``target`` under softmax(logits)."""
    if logits.size == 0:
        raise DomainError("nll over an empty vocabulary")
    if not 0 <= target < logits.size:
        raise DimensionError(f"target {target} outside {logits.size} classes")
    y = special.log_softmax(logits.data)
    p = np.exp(y)

    def backward(g):
        d = p.copy()
        d[target] -= 1.0
        return (g * d,)

    return Value.from_op(np.asarray(-y[target]), (logits,), "nll", backward)


# ============================================================================
# BACKWARD
# ============================================================================

def _reachable(root: Value) -> List[Value]:
    seen = {id(root)}
    stack = [root]
    nodes = []
    while stack:
        node = stack.pop()
        nodes.append(node)
        for parent in node.parents:
            if id(parent) not in seen:
                seen.add(id(parent))
                stack.append(parent)
    return nodes


def backward(loss: Value, accumulate: bool = True, seed: float = 1.0) -> Dict[str, np.ndarray]:
    """
    Propagate d(loss)/d(leaf) to every reachable parameter.

    Args:
        loss: Scalar Value
        accumulate: Add the gradients into each parameter's ``grad``; with
            False the gradients are only returned (used by worker threads)
        seed: Output gradient (``1/batch`` lets workers pre-scale)

    Returns:
        Mapping parameter name -> gradient for every reachable parameter

    Raises:
        ContractError: ``loss`` is not a scalar
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    nodes = _reachable(loss)
    nodes.sort(key=lambda v: v.index, reverse=True)

    pending: Dict[int, np.ndarray] = {id(loss): np.full(loss.shape, float(seed))}
    result: Dict[str, np.ndarray] = {}

    for node in nodes:
        g = pending.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        if not node.parents:
            key = node.name if node.name is not None else f"#{node.index}"
            result[key] = result[key] + g if key in result else g
            if accumulate:
                node.accumulate_grad(g)
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            existing = pending.get(id(parent))
            pending[id(parent)] = pg if existing is None else existing + pg

    return result
