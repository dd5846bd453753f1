"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Graphs are recorded define-by-run: every primitive applied to a tensor that
requires gradients appends a node holding its inputs and a backward rule.
``backward`` walks the recorded nodes once in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when a primitive receives operands of incompatible shapes."""

    def __init__(self, op: str, expected, actual):
        super().__init__(f"{op}: expected shape {expected}, got {actual}")
        self.op = op
        self.expected = expected
        self.actual = actual


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

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
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not a primitive")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), back, "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul", "rank >= 1", (a.shape, b.shape))
    k_a = a.shape[-1]
    k_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if k_a != k_b:
        raise ShapeError("matmul", f"inner dims equal ({k_a})", (a.shape, b.shape))
    out = a.data @ b.data

    def back(g):
        ad, bd = a.data, b.data
        a2 = ad[None, :] if ad.ndim == 1 else ad
        b2 = bd[:, None] if bd.ndim == 1 else bd
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if ad.ndim == 1:
            ga = ga.reshape(ga.shape[:-2] + ga.shape[-1:])
        if bd.ndim == 1:
            gb = gb[..., 0]
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), back, "matmul")


# -- structural ------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError("concat", ref, t.shape)
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _make(out, tensors, back, "concat")


def getitem(a: Tensor, index) -> Tensor:
    """Basic slicing and integer-array gathering; gradient scatters back."""
    out = a.data[index]
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(p is Ellipsis or p is None or isinstance(p, (slice, int, np.integer)) for p in parts)

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, copy=True), (a,), back, "slice")


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]``; ``ids`` is any integer array."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeError("embedding", f"ids in [0, {weight.shape[0]})", (int(ids.min()), int(ids.max())))
    out = weight.data[ids]

    def back(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (full,)

    return _make(out, (weight,), back, "embedding")


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", shape, a.shape) from None

    def back(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), back, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def back(g):
        return (np.transpose(g, inv),)

    return _make(out, (a,), back, "transpose")


# -- nonlinearities -------------------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), back, "softmax")


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.exp(a.data - m).sum(axis=axis, keepdims=True)
    out_k = m + np.log(s)
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def back(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * np.exp(a.data - out_k),)

    return _make(out, (a,), back, "logsumexp")


def log_softmax(a: Tensor) -> Tensor:
    return sub(a, logsumexp(a, axis=-1, keepdims=True))


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data

    def back(g):
        gx_hat = g * gain.data
        ga = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return ga, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _make(out, (a, gain, bias), back, "layer_norm")


# -- reductions -----------------------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), back, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(reduce_sum(a, axis, keepdims), 1.0 / count)


# -- custom fused ops -------------------------------------------------------------


def custom_op(inputs: Sequence[Tensor], value: np.ndarray, grads: Sequence[np.ndarray | None], op: str) -> Tensor:
    """Wrap a value whose Jacobian-vector products are precomputed.

    ``grads[i]`` is d(value)/d(inputs[i]) contracted with a unit upstream
    gradient of the same shape as ``value``'s leading axes; used for ops like
    the CTC loss where the backward is produced by the forward kernel.
    """
    value = np.asarray(value, dtype=np.float64)

    def back(g):
        out = []
        for inp, gr in zip(inputs, grads):
            if gr is None:
                out.append(np.zeros_like(inp.data))
            else:
                gg = np.reshape(g, g.shape + (1,) * (gr.ndim - g.ndim))
                out.append(gg * gr)
        return tuple(out)

    return _make(value, inputs, back, op)


# -- graphs -------------------------------------------------------------------------


class Graph:
    """A named computation: ``fn(params, inputs) -> dict of output tensors``."""

    def __init__(self, fn: Callable[[dict, dict], dict], params: dict[str, Tensor] | None = None):
        self.fn = fn
        self.params = dict(params or {})

    def forward(self, inputs: dict) -> dict[str, Tensor]:
        bound = {k: as_tensor(v) for k, v in inputs.items()}
        return self.fn(self.params, bound)


def forward(graph: Graph, inputs: dict) -> dict[str, Tensor]:
    return graph.forward(inputs)


# -- graph traversal ------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Back-propagate from a scalar ``loss``.

    Leaf tensors with ``requires_grad`` receive their gradient in ``.grad``
    (accumulated if already set).  Returns a mapping from each requested leaf
    (default: every leaf reached) to its gradient.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", "scalar loss", loss.shape)
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring gradients")
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: list[Tensor] = []
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            leaves.append(node)
            if g is not None:
                node.grad = g if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    result = {leaf: leaf.grad for leaf in leaves}
    if wrt is None:
        return result
    out = {}
    for t in wrt:
        if t not in result:
            raise ValueError(f"tensor {t!r} is detached from the loss graph")
        out[t] = result[t]
    return out


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between backprop and central differences.

    ``fn`` rebuilds the scalar objective from the current values of
    ``params``.  With ``max_coords`` set, at most that many coordinates per
    parameter are probed (sampled with ``rng``).
    """
    zero_grad(params)
    loss = fn()
    if loss.requires_grad:
        backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                fp = fn().item()
                flat[i] = orig - eps
                fm = fn().item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * eps)
                ana = ga.reshape(-1)[i]
                denom = max(abs(ana), abs(num), 1e-8)
                worst = max(worst, abs(ana - num) / denom)
    zero_grad(params)
    return worst
