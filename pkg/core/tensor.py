"""
Dense tensor engine with reverse-mode automatic differentiation

Tensors wrap row-major numpy arrays (float32 by default). Every operation
builds its node on the fly (define-by-run); `backward` sorts the nodes that
lead to a scalar loss into a `ComputeGraph` and walks it once in reverse.

Every public operation checks its output for NaN/Inf and raises
`NumericError` instead of letting non-finite values propagate.
"""
import contextlib
import logging
import threading
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.exceptions import DimensionError, DomainError, NumericError, UsageError

logger = logging.getLogger(__name__)

_state = threading.local()
_DEFAULT_DTYPE = [np.float32]

ACTIVATIONS = ('identity', 'tanh', 'relu', 'sigmoid', 'softplus')
ELEMENTWISE_OPS = ('add', 'sub', 'mul', 'exp', 'log', 'square', 'neg', 'scale')
REDUCE_OPS = ('sum', 'mean')

ArrayLike = Union[np.ndarray, float, int, Sequence]


def get_default_dtype():
    return _DEFAULT_DTYPE[0]


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype new tensors are created with (process-wide)"""
    previous = _DEFAULT_DTYPE[0]
    _DEFAULT_DTYPE[0] = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE[0] = previous


def grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording graph nodes (per thread)"""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """Dense array with an optional gradient record"""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: Tuple['Tensor', ...] = (), _op: str = 'leaf',
                 _backward: Optional[Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]] = None):
        array = np.array(data, dtype=get_default_dtype(), copy=True) if not isinstance(data, np.ndarray) \
            else data.astype(get_default_dtype(), copy=False)
        if any(extent <= 0 for extent in array.shape):
            raise DimensionError(f"Tensor extents must be positive, got shape {array.shape}")
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents = _parents
        self._op = _op
        self._backward = _backward

    # --- introspection -------------------------------------------------
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
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> 'Tensor':
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}, op={self._op}{label}, requires_grad={self.requires_grad})"

    # --- operator sugar --------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(as_tensor(other), self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(as_tensor(other), self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(as_tensor(other), self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(as_tensor(other), self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, key): return index(self, key)

    def sum(self, axis: Optional[int] = None) -> 'Tensor':
        return reduce('sum', self, axis)

    def mean(self, axis: Optional[int] = None) -> 'Tensor':
        return reduce('mean', self, axis)

    def exp(self) -> 'Tensor':
        return exp(self)

    def log(self) -> 'Tensor':
        return log(self)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], op: str,
            backward: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]) -> Tensor:
    data = np.asarray(data, dtype=get_default_dtype())
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    track = grad_enabled() and any(parent.requires_grad for parent in parents)
    if not track:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _op=op, _backward=backward)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast compatible")


# --- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'add')
    return _result(a.data + b.data, (a, b), 'add',
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'sub')
    return _result(a.data - b.data, (a, b), 'sub',
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'mul')
    return _result(a.data * b.data, (a, b), 'mul',
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, 'div')
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    return _result(a.data / b.data, (a, b), 'div',
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), 'neg', lambda g: (-g,))


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)
    return _result(a.data * factor, (a,), 'scale', lambda g: (g * factor,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), 'square', lambda g: (2.0 * a.data * g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over='ignore'):
        out = np.exp(a.data)
    return _result(out, (a,), 'exp', lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    return _result(np.log(a.data), (a,), 'log', lambda g: (g / a.data,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.sin(a.data), (a,), 'sin', lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.cos(a.data), (a,), 'cos', lambda g: (-g * np.sin(a.data),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.abs(a.data), (a,), 'abs', lambda g: (g * np.sign(a.data),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes only where the input was inside"""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), 'clip', lambda g: (g * inside,))


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch one of the named elementwise operations"""
    if op not in ELEMENTWISE_OPS:
        raise UsageError(f"Unknown elementwise op '{op}', expected one of {ELEMENTWISE_OPS}")
    binary = {'add': add, 'sub': sub, 'mul': mul}
    unary = {'exp': exp, 'log': log, 'square': square, 'neg': neg}
    if op in binary:
        if b is None:
            raise UsageError(f"{op} needs a second operand")
        return binary[op](a, b)
    if op == 'scale':
        if b is None:
            raise UsageError("scale needs a scalar factor")
        return scale(a, float(b.item() if isinstance(b, Tensor) else b))
    return unary[op](a)


# --- activations ---------------------------------------------------------------

def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), 'tanh', lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.maximum(a.data, 0), (a,), 'relu', lambda g: (g * (a.data > 0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.empty_like(a.data)
    positive = a.data >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-a.data[positive]))
    expx = np.exp(a.data[~positive])
    out[~positive] = expx / (1.0 + expx)
    return _result(out, (a,), 'sigmoid', lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0, a.data)

    def backward(g):
        return (g / (1.0 + np.exp(-np.clip(a.data, -60, 60))),)
    return _result(out, (a,), 'softplus', backward)


def identity(a) -> Tensor:
    return as_tensor(a)


def activate(a, activation: str) -> Tensor:
    functions = {'identity': identity, 'tanh': tanh, 'relu': relu,
                 'sigmoid': sigmoid, 'softplus': softplus}
    if activation not in functions:
        raise UsageError(f"Unknown activation '{activation}', expected one of {ACTIVATIONS}")
    return functions[activation](a)


# --- linear algebra and shape ------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _result(a.data @ b.data, (a, b), 'matmul',
                   lambda g: (g @ b.data.T, a.data.T @ g))


def forward_dense(inputs, weights, bias, activation: str = 'identity') -> Tensor:
    """activation(inputs @ weights + bias) for a B×I batch"""
    inputs, weights, bias = as_tensor(inputs), as_tensor(weights), as_tensor(bias)
    if activation not in ACTIVATIONS:
        raise UsageError(f"Unknown activation '{activation}', expected one of {ACTIVATIONS}")
    if inputs.ndim != 2 or weights.ndim != 2 or inputs.shape[1] != weights.shape[0]:
        raise DimensionError(f"dense: input {inputs.shape} does not conform to weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise DimensionError(f"dense: bias {bias.shape} does not match {weights.shape[1]} outputs")
    return activate(matmul(inputs, weights) + bias, activation)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {original} as {tuple(shape)}")
    return _result(out, (a,), 'reshape', lambda g: (g.reshape(original),))


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise UsageError("concat needs at least one tensor")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except (ValueError, np.AxisError) as e:
        raise DimensionError(f"concat: {e}")
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _result(out, tuple(parts), 'concat', backward)


def index(a, key) -> Tensor:
    """Basic or fancy indexing; gradient scatters back into the source shape"""
    a = as_tensor(a)
    try:
        out = a.data[key]
    except IndexError as e:
        raise DimensionError(f"index: {e}")
    out = np.array(out, copy=True)
    if out.ndim == 0:
        out = out.reshape(())

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)
    return _result(out, (a,), 'index', backward)


# --- reductions ------------------------------------------------------------------

def _check_axis(a: Tensor, axis: Optional[int]) -> Optional[int]:
    if axis is None:
        return None
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {a.ndim}")
    return axis % a.ndim


def reduce(op: str, a, axis: Optional[int] = None) -> Tensor:
    if op not in REDUCE_OPS:
        raise UsageError(f"Unknown reduction '{op}', expected one of {REDUCE_OPS}")
    a = as_tensor(a)
    axis = _check_axis(a, axis)
    count = a.size if axis is None else a.shape[axis]
    out = a.data.sum(axis=axis)
    if op == 'mean':
        out = out / count

    def backward(g):
        g = g if axis is None else np.expand_dims(g, axis)
        g = np.broadcast_to(g, a.shape)
        return ((g / count) if op == 'mean' else g.copy(),)
    return _result(out, (a,), op, backward)


def softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows expects B×K, got {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)
    return _result(out, (a,), 'softmax', backward)


def log_softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"log_softmax_rows expects B×K, got {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - logsum
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)
    return _result(out, (a,), 'log_softmax', backward)


# --- graph and backward ----------------------------------------------------------

class ComputeGraph:
    """Topologically ordered nodes that lead to one output tensor"""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def trace(cls, output: Tensor) -> 'ComputeGraph':
        order: List[Tensor] = []
        visited = set()
        stack = [(output, False)]
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
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def release(self) -> None:
        """Drop interior closures so the graph cannot be replayed"""
        for node in self.nodes:
            if not node.is_leaf:
                node._backward = None
                node._parents = ()
        self.nodes = []


def backward(loss: Tensor, graph: Optional[ComputeGraph] = None) -> None:
    """Populate `.grad` of every requires_grad leaf with d(loss)/d(leaf)

    Leaf gradients are overwritten, not accumulated; the graph is released
    afterwards.
    """
    if not isinstance(loss, Tensor) or loss.ndim != 0:
        raise UsageError(f"backward needs a scalar loss, got shape {getattr(loss, 'shape', None)}")
    if not loss.requires_grad:
        return
    graph = graph or ComputeGraph.trace(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.astype(node.data.dtype, copy=False)
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + parent_grad
            else:
                grads[id(parent)] = parent_grad
    graph.release()


def zeros(*shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(*shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)
