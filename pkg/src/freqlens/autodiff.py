"""Reverse-mode automatic differentiation over dense float64 tensors.

A :class:`Tensor` wraps a NumPy array.  Every operation produces a fresh
tensor; when any input participates in gradient tracking, the output
records its parents and a backward rule.  Because outputs are always
created after their inputs, monotonically increasing node ids double as a
topological order of the implicit tape, and :func:`backward` replays it
exactly once in reverse.

Design constraints:
  * float64 everywhere (the attribution exactness checks need it),
  * no in-place mutation of tensors that are on the tape,
  * a single-threaded tape per training run; tensors are immutable after
    creation, so read-only sharing for inference is safe.

Discrete boundary operations (random noise draws, top-k index extraction,
sort permutations) are deliberately untracked: they enter the graph as
constants.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "einsum",
    "square",
    "sqrt",
    "absolute",
    "exp",
    "log",
    "cos",
    "sigmoid",
    "relu",
    "softmax",
    "reshape",
    "transpose",
    "broadcast_to",
    "concat",
    "clip_min",
    "clip",
    "gather_rows",
    "sort_ascending",
    "check_gradients",
    "finite_difference",
]

_node_ids = itertools.count()


class Tensor:
    """Dense float64 array, optionally tracked for reverse-mode gradients."""

    __slots__ = ("data", "requires_grad", "node_id", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self.grad: Tensor | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Constant view of this tensor's value, off the tape."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def sum(self, axis=None, keepdims: bool = False):
        return _sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return _mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(out_data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce ``grad`` down to ``shape`` (inverse of NumPy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(kind: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{kind}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------------------
# elementwise binary ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a.data, b.data)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a.data, b.data)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a.data, b.data)

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward_fn)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a.data, b.data)
    out_data = a.data / b.data

    def backward_fn(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(out_data, (a, b), backward_fn)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(g):
        return (-g,)

    return _make(-a.data, (a,), backward_fn)


# ---------------------------------------------------------------------------
# contractions
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product ``a @ b`` with NumPy batch broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are not conformable")
    out_data = a.data @ b.data

    def backward_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(out_data, (a, b), backward_fn)


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum.

    Restricted form: no repeated index within an operand, and every index
    of each operand must appear in the output or in the other operand, so
    the backward pass is itself an einsum with output and operand swapped.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    in_spec, out_spec = subscripts.replace(" ", "").split("->")
    a_spec, b_spec = in_spec.split(",")
    try:
        out_data = np.einsum(subscripts, a.data, b.data)
    except ValueError:
        raise ValueError(
            f"einsum '{subscripts}': shapes {a.shape} and {b.shape} do not match the subscripts"
        ) from None

    def backward_fn(g):
        ga = np.einsum(f"{out_spec},{b_spec}->{a_spec}", g, b.data)
        gb = np.einsum(f"{out_spec},{a_spec}->{b_spec}", g, a.data)
        return ga, gb

    return _make(out_data, (a, b), backward_fn)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    if not keepdims:
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def _sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        return (_expand_reduced(g, x.shape, axis, keepdims),)

    return _make(out_data, (x,), backward_fn)


def _mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.size // max(out_data.size, 1)

    def backward_fn(g):
        return (_expand_reduced(g, x.shape, axis, keepdims) / count,)

    return _make(out_data, (x,), backward_fn)


# ---------------------------------------------------------------------------
# elementwise unary ops
# ---------------------------------------------------------------------------

def square(x) -> Tensor:
    x = _as_tensor(x)

    def backward_fn(g):
        return (g * (2.0 * x.data),)

    return _make(x.data * x.data, (x,), backward_fn)


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data < 0):
        raise ValueError("sqrt: negative input")
    out_data = np.sqrt(x.data)

    def backward_fn(g):
        return (g * (0.5 / out_data),)

    return _make(out_data, (x,), backward_fn)


def absolute(x) -> Tensor:
    x = _as_tensor(x)

    def backward_fn(g):
        return (g * np.sign(x.data),)

    return _make(np.abs(x.data), (x,), backward_fn)


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.exp(x.data)

    def backward_fn(g):
        return (g * out_data,)

    return _make(out_data, (x,), backward_fn)


def log(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise ValueError("log: nonpositive input")
    out_data = np.log(x.data)

    def backward_fn(g):
        return (g / x.data,)

    return _make(out_data, (x,), backward_fn)


def cos(x) -> Tensor:
    x = _as_tensor(x)

    def backward_fn(g):
        return (-g * np.sin(x.data),)

    return _make(np.cos(x.data), (x,), backward_fn)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # overflow-safe two-branch form; identical to 1/(1+exp(-x)) in value
    z = np.exp(-np.abs(x.data))
    out_data = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def backward_fn(g):
        return (g * out_data * (1.0 - out_data),)

    return _make(out_data, (x,), backward_fn)


def relu(x) -> Tensor:
    x = _as_tensor(x)

    def backward_fn(g):
        return (g * (x.data > 0),)

    return _make(np.maximum(x.data, 0.0), (x,), backward_fn)


def clip_min(x, floor: float) -> Tensor:
    """max(x, floor); the clipped region receives zero gradient."""
    x = _as_tensor(x)

    def backward_fn(g):
        return (g * (x.data >= floor),)

    return _make(np.maximum(x.data, floor), (x,), backward_fn)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; clipped regions receive zero gradient."""
    x = _as_tensor(x)

    def backward_fn(g):
        return (g * ((x.data >= lo) & (x.data <= hi)),)

    return _make(np.clip(x.data, lo, hi), (x,), backward_fn)


def softmax(x, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, shift-stabilized by the (constant) row max."""
    x = _as_tensor(x)
    shifted = sub(x, Tensor(x.data.max(axis=axis, keepdims=True)))
    e = exp(shifted)
    return div(e, e.sum(axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape) if isinstance(shape, (tuple, list)) else (shape,)
    out_data = x.data.reshape(shape)

    def backward_fn(g):
        return (g.reshape(x.shape),)

    return _make(out_data, (x,), backward_fn)


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    x = _as_tensor(x)
    out_data = x.data.transpose(axes)
    inv = None if axes is None else np.argsort(axes)

    def backward_fn(g):
        return (g.transpose(inv),)

    return _make(out_data, (x,), backward_fn)


def broadcast_to(x, shape) -> Tensor:
    x = _as_tensor(x)
    _check_broadcast("broadcast", x.data, np.empty(shape))
    out_data = np.broadcast_to(x.data, shape)

    def backward_fn(g):
        return (_unbroadcast(g, x.shape),)

    return _make(out_data, (x,), backward_fn)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(_as_tensor(t) for t in tensors)
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return _make(out_data, parts, backward_fn)


def _getitem(x: Tensor, index) -> Tensor:
    out_data = x.data[index]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(out_data, (x,), backward_fn)


def gather_rows(x, index) -> Tensor:
    """Per-sample row selection: x[b, index[b, k], ...] -> [B, K, ...]."""
    x = _as_tensor(x)
    idx = np.asarray(index)
    if x.ndim < 2 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ValueError(f"gather_rows: shapes {x.shape} and {idx.shape} are not conformable")
    batch = np.arange(x.shape[0])[:, None]
    out_data = x.data[batch, idx]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (batch, idx), g)
        return (gx,)

    return _make(out_data, (x,), backward_fn)


def sort_ascending(x) -> tuple[Tensor, np.ndarray]:
    """Sort a vector ascending.

    Returns the sorted tensor and the permutation (as a constant).  The
    gradient of sorted position j routes to original index permutation[j];
    the permutation itself is fixed within one forward pass, which is the
    standard almost-everywhere derivative of sorting.
    """
    x = _as_tensor(x)
    if x.ndim != 1:
        raise ValueError(f"sort_ascending: expected a vector, got shape {x.shape}")
    if np.any(np.isnan(x.data)):
        raise ValueError("sort_ascending: NaN input")
    perm = np.argsort(x.data, kind="stable")
    out_data = x.data[perm]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gx[perm] = g
        return (gx,)

    return _make(out_data, (x,), backward_fn), perm


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> dict[int, Tensor]:
    """Accumulate d(loss)/d(node) for every tracked node reachable from ``loss``.

    Returns a map from node id to gradient tensor and stores the same
    gradient on each tensor's ``grad`` attribute.  Repeated use of a node
    sums the gradients from all its consumers.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.node_id in nodes:
            continue
        nodes[t.node_id] = t
        stack.extend(t._parents)

    # creation order is a topological order: outputs are born after inputs
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for t in sorted(nodes.values(), key=lambda n: n.node_id, reverse=True):
        g = grads.get(t.node_id)
        if g is None or t._backward is None:
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(parent.node_id)
            grads[parent.node_id] = pg if acc is None else acc + pg

    result: dict[int, Tensor] = {}
    for nid, t in nodes.items():
        if t.requires_grad and nid in grads:
            gt = Tensor(grads[nid])
            t.grad = gt
            result[nid] = gt
    return result


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def finite_difference(f: Callable[[], float], params: Sequence[Tensor], eps: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradients of a scalar function of ``params``.

    ``f`` is re-evaluated with each parameter coordinate perturbed in
    place by +/- eps; parameters are restored afterwards.
    """
    grads = []
    for p in params:
        flat = p.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f())
            flat[i] = orig - eps
            down = float(f())
            flat[i] = orig
            g[i] = (up - down) / (2.0 * eps)
        grads.append(g.reshape(p.shape))
    return grads


def check_gradients(f: Callable[[Tensor], Tensor], point: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Relative error per coordinate is |analytic - numeric| / max(1, |analytic|);
    ``f`` must be scalar-valued and evaluable at point +/- eps perturbations.
    """
    p = Tensor(np.array(point.data, copy=True), requires_grad=True)
    loss = f(p)
    grads = backward(loss)
    analytic = grads[p.node_id].data if p.node_id in grads else np.zeros_like(p.data)
    numeric = finite_difference(lambda: f(Tensor(p.data)).item(), [p], eps=eps)[0]
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(rel.max())
