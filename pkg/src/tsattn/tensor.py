"""Dense numpy-backed tensor with a dynamic reverse-mode tape.

Every differentiable op records its parents and a closure mapping the output
gradient to per-parent gradients. ``Tensor.backward`` linearises the graph
into a topological tape and walks it once in reverse.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "tensor",
    "no_grad",
    "set_debug",
    "tape",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "elementwise",
    "relu",
    "sigmoid",
    "activation",
    "exp",
    "log",
    "sqrt",
    "softmax",
    "log_softmax",
    "softmax_axis",
    "reduce_axis",
    "tsum",
    "mean",
    "tmax",
    "std",
    "reshape",
    "transpose",
    "concat",
    "conv2d",
]

STD_EPS = 1e-10


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an op."""


_state = threading.local()
_debug = False


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def set_debug(flag: bool) -> None:
    """Toggle finite-output checking after every forward op."""
    global _debug
    _debug = bool(flag)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators ---------------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    # -- autodiff -----------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every ``requires_grad`` leaf.

        Only scalar tensors may seed the pass without an explicit ``grad``.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")
        order = tape(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered nodes reachable from ``root`` that need gradients."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if _debug and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise FloatingPointError(f"{op} produced non-finite values from finite inputs")
    out = Tensor(data)
    out.op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes that were stretched to reach its shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} are not broadcastable") from None


# -- elementwise binary ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a.shape, b.shape)
    out = a.data / b.data
    return _result(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        ),
        "div",
    )


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    b = _as_tensor(b)
    return _as_tensor(a, b), b


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul}


def elementwise(a, b, op: str) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


# -- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    if a.ndim > 2 or b.ndim > 2:
        _broadcast_shape(a.shape[:-2], b.shape[:-2])

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward, "matmul")


# -- unary -----------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    # np.maximum keeps NaN visible; a masked select would silently zero it
    return _result(np.maximum(x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _result(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


# -- softmax -----------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.shape[axis] == 0:
        raise ShapeError(f"softmax over empty axis {axis} of shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), backward, "softmax")


softmax_axis = softmax


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax")


# -- reductions ---------------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for {ndim}-d tensor")
        out.append(a % ndim)
    return tuple(out)


def _expand(g: np.ndarray, axes: tuple, keepdims: bool) -> np.ndarray:
    return g if keepdims else np.expand_dims(g, axes)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)
    return _result(
        np.asarray(out),
        (x,),
        lambda g: (np.broadcast_to(_expand(g, axes, keepdims), x.shape).copy(),),
        "sum",
    )


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    if n == 0:
        raise ShapeError(f"mean over empty axis of shape {x.shape}")
    out = x.data.mean(axis=axes, keepdims=keepdims)
    return _result(
        np.asarray(out),
        (x,),
        lambda g: (np.broadcast_to(_expand(g, axes, keepdims) / n, x.shape).copy(),),
        "mean",
    )


def tmax(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal index."""
    (ax,) = _norm_axis(axis, x.ndim)
    if x.shape[ax] == 0:
        raise ShapeError(f"max over empty axis {ax} of shape {x.shape}")
    idx = np.expand_dims(np.argmax(x.data, axis=ax), ax)
    out = np.take_along_axis(x.data, idx, axis=ax)

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, g if keepdims else np.expand_dims(g, ax), axis=ax)
        return (full,)

    return _result(out if keepdims else np.squeeze(out, ax), (x,), backward, "max")


def std(x: Tensor, axis: int = -1, keepdims: bool = False, eps: float = STD_EPS) -> Tensor:
    """Population standard deviation, ``sqrt(var + eps)``."""
    (ax,) = _norm_axis(axis, x.ndim)
    n = x.shape[ax]
    if n == 0:
        raise ShapeError(f"std over empty axis {ax} of shape {x.shape}")
    centered = x.data - x.data.mean(axis=ax, keepdims=True)
    sd = np.sqrt((centered**2).mean(axis=ax, keepdims=True) + eps)

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, ax)
        return (gk * centered / (n * sd),)

    return _result(sd if keepdims else np.squeeze(sd, ax), (x,), backward, "std")


_REDUCERS = {"sum": tsum, "mean": mean, "max": tmax, "std": std}


def reduce_axis(x: Tensor, axis: int, kind: str, keepdims: bool = False) -> Tensor:
    try:
        fn = _REDUCERS[kind]
    except KeyError:
        raise ValueError(f"unknown reduction {kind!r}") from None
    return fn(x, axis, keepdims)


# -- shape manipulation ------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if shape.count(-1) == 1 and x.data.size:
        known = int(np.prod([s for s in shape if s != -1]))
        if known and x.data.size % known == 0:
            shape = tuple(x.data.size // known if s == -1 else s for s in shape)
    if int(np.prod(shape)) != x.data.size or any(s < 0 for s in shape):
        raise ShapeError(f"cannot reshape {x.shape} into {shape}")
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {axes} for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in parts)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(np.array(out), (x,), backward, "getitem")


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of zero tensors")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concat shapes {[t.shape for t in ts]} on axis {axis}") from exc
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(out, ts, backward, "concat")


# -- convolution ------------------------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Channels-last 2-D cross-correlation.

    x: (B, H, W, Cin); w: (kh, kw, Cin, Cout) -> (B, Ho, Wo, Cout) with
    Ho = (H + 2*padding - kh) // stride + 1.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d dimension mismatch: input {x.shape}, kernel {w.shape}")
    B, H, W, C = x.shape
    kh, kw, _, O = w.shape
    p, s = padding, stride
    Hp, Wp = H + 2 * p, W + 2 * p
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho, Wo = (Hp - kh) // s + 1, (Wp - kw) // s + 1
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.data

    def tap(arr, i, j):
        return arr[:, i : i + s * (Ho - 1) + 1 : s, j : j + s * (Wo - 1) + 1 : s]

    out = np.zeros((B, Ho, Wo, O), dtype=np.result_type(x.data, w.data))
    for i in range(kh):
        for j in range(kw):
            out += tap(xp, i, j) @ w.data[i, j]

    def backward(g):
        gw = gx = None
        if w.requires_grad:
            g2 = g.reshape(-1, O)
            gw = np.empty_like(w.data)
            for i in range(kh):
                for j in range(kw):
                    gw[i, j] = tap(xp, i, j).reshape(-1, C).T @ g2
        if x.requires_grad:
            gxp = np.zeros((B, Hp, Wp, C), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    tap(gxp, i, j)[...] += g @ w.data[i, j].T
            gx = gxp[:, p : p + H, p : p + W] if p else gxp
        return gx, gw

    return _result(np.ascontiguousarray(out), (x, w), backward, "conv2d")
