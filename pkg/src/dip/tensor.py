"""Dense float64 tensors with taped reverse-mode differentiation.

The tape is built eagerly: every operation on a ``Tensor`` records the
closure that routes gradients back into its inputs.  ``backward()`` on a
scalar fills ``.grad`` on every reachable tracked tensor.  Results are
checked for finiteness after every operation; NaN/Inf raises
``NumericsError`` instead of propagating silently.

Tensors are immutable values once produced.  Recording is thread-local:
independent forward/backward passes may run in parallel, one tape each.
"""

from __future__ import annotations

import math
import threading

import numpy as np

__all__ = [
    "NumericsError",
    "Tensor",
    "no_grad",
    "as_tensor",
    "concat",
    "stack",
    "softmax_rows",
    "biased_attention",
    "layer_norm",
]


class NumericsError(RuntimeError):
    """A numeric contract was violated (non-finite values, bad shapes)."""


_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "no_grad_depth", 0) == 0


class no_grad:
    """Context manager: evaluate operations without recording the tape."""

    def __enter__(self):
        _state.no_grad_depth = getattr(_state, "no_grad_depth", 0) + 1
        return self

    def __exit__(self, *exc):
        _state.no_grad_depth -= 1
        return False


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # a single reduction: any NaN/Inf in the array makes the sum non-finite
        if not math.isfinite(float(arr.sum())):
            raise NumericsError("non-finite values in tensor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._prev: tuple[Tensor, ...] = ()

    # -- construction helpers -------------------------------------------------

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
        if self.data.size != 1:
            raise NumericsError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- backward pass ---------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar root; accumulates into `.grad` of leaves.

        Call once per tape: intermediate tensors are single-use.
        """
        if self.data.size != 1:
            raise NumericsError("backward() requires a scalar root")
        if not self.requires_grad:
            raise NumericsError(
                "backward() on a tensor with no recorded dependencies; "
                "run a forward pass over tracked parameters first"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, other)
        return add(self, as_tensor(other))

    def __radd__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, other)
        return add(as_tensor(other), self)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -other)
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(neg(self), other)
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, other)
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, other)
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, 1.0 / other)
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    # method aliases used throughout the model code
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def gelu(self):
        return gelu(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return tmax(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents
        out._backward = backward
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    # accumulation never mutates in place, so grads may alias upstream buffers
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = g.reshape(t.data.shape)
    t.grad = g if t.grad is None else t.grad + g


# -- elementwise arithmetic --------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _acc(a, _unbroadcast(g / b.data, a.data.shape))
        _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(a.data / b.data, (a, b), backward)


def add_scalar(a: Tensor, c: float) -> Tensor:
    def backward(g):
        _acc(a, g)

    return _make(a.data + c, (a,), backward)


def mul_scalar(a: Tensor, c: float) -> Tensor:
    def backward(g):
        _acc(a, g * c)

    return _make(a.data * c, (a,), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _acc(a, -g)

    return _make(-a.data, (a,), backward)


def pow_scalar(a: Tensor, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise NumericsError("only scalar exponents are supported")
    n = float(exponent)

    def backward(g):
        _acc(a, g * n * a.data ** (n - 1.0))

    return _make(a.data**n, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _acc(a, g * out_data)

    return _make(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        _acc(a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        _acc(a, g / (2.0 * out_data))

    return _make(out_data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        _acc(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        _acc(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    x = a.data
    x2 = x * x
    u = _GELU_C * (x + _GELU_A * x2 * x)
    t = np.tanh(u)

    def backward(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        _acc(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du))

    return _make(0.5 * x * (1.0 + t), (a,), backward)


# -- reductions --------------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)

    def backward(g):
        gk = g if keepdims or a.data.ndim == 0 else np.expand_dims(g, axes)
        _acc(a, np.broadcast_to(gk, a.data.shape))

    return _make(a.data.sum(axis=axes or None, keepdims=keepdims), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    count = int(np.prod([a.data.shape[ax] for ax in axes])) if axes else 1

    def backward(g):
        gk = g if keepdims or a.data.ndim == 0 else np.expand_dims(g, axes)
        _acc(a, np.broadcast_to(gk / count, a.data.shape))

    return _make(a.data.mean(axis=axes or None, keepdims=keepdims), (a,), backward)


def tmax(a: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    out_keep = a.data.max(axis=axes or None, keepdims=True)
    mask = a.data == out_keep

    def backward(g):
        gk = g if keepdims or a.data.ndim == 0 else np.expand_dims(g, axes)
        share = mask / mask.sum(axis=axes or None, keepdims=True)
        _acc(a, share * gk)

    out = out_keep if keepdims else a.data.max(axis=axes or None)
    return _make(out, (a,), backward)


# -- shape manipulation -------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        _acc(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    def backward(g):
        _acc(a, g.swapaxes(ax1, ax2))

    return _make(a.data.swapaxes(ax1, ax2), (a,), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = np.argsort(axes)

    def backward(g):
        _acc(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward)


def getitem(a: Tensor, index) -> Tensor:
    fancy = isinstance(index, np.ndarray) or (
        isinstance(index, tuple) and any(isinstance(i, (np.ndarray, list)) for i in index)
    )

    def backward(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] += g
        _acc(a, full)

    return _make(a.data[index], (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _acc(t, g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        for i, t in enumerate(tensors):
            _acc(t, np.take(g, i, axis=axis))

    return _make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


# -- linear algebra ------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise NumericsError("matmul requires tensors of rank >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise NumericsError(
            f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}"
        )

    def backward(g):
        _acc(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
        _acc(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

    return _make(a.data @ b.data, (a, b), backward)


# -- fused neural-network primitives ---------------------------------------------------


def softmax_lastaxis(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        _acc(a, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _make(s, (a,), backward)


def softmax_rows(m: Tensor) -> Tensor:
    """Row-wise softmax of a rank-2 tensor, computed with max-subtraction.

    Each output row is nonnegative and sums to 1 (to within double-precision
    rounding).  NaN input is rejected at tensor construction.
    """
    m = as_tensor(m)
    if m.data.ndim != 2:
        raise NumericsError(f"softmax_rows requires a rank-2 tensor, got rank {m.data.ndim}")
    return softmax_lastaxis(m)


def biased_attention(q: Tensor, k: Tensor, v: Tensor, bias: Tensor | None = None) -> Tensor:
    """Scaled dot-product attention with an optional additive score bias.

    Computes ``softmax(q @ k^T / sqrt(E) + bias) @ v`` over the last two
    axes; leading axes (frames, heads) broadcast.  ``bias=None`` is
    bit-identical to passing a zero bias.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.data.ndim < 2 or k.data.ndim < 2 or v.data.ndim < 2:
        raise NumericsError("attention inputs must have rank >= 2")
    e = q.data.shape[-1]
    if k.data.shape[-1] != e:
        raise NumericsError(f"query/key width mismatch: {e} vs {k.data.shape[-1]}")
    if v.data.shape[-2] != k.data.shape[-2]:
        raise NumericsError(
            f"key/value length mismatch: {k.data.shape[-2]} vs {v.data.shape[-2]}"
        )
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / math.sqrt(e))
    if bias is not None:
        bias = as_tensor(bias)
        if bias.data.shape[-2:] != (q.data.shape[-2], k.data.shape[-2]):
            raise NumericsError(
                f"bias shape {bias.data.shape} does not match scores "
                f"({q.data.shape[-2]}, {k.data.shape[-2]})"
            )
        scores = add(scores, bias)
    return matmul(softmax_lastaxis(scores), v)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.data.shape[-1]

    def backward(g):
        gxhat = g * gamma.data
        _acc(
            x,
            inv
            * (
                gxhat
                - gxhat.mean(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
            ),
        )
        reduce_axes = tuple(range(g.ndim - 1))
        _acc(gamma, (g * xhat).sum(axis=reduce_axes) if reduce_axes else g * xhat)
        _acc(beta, g.sum(axis=reduce_axes) if reduce_axes else g)

    return _make(gamma.data * xhat + beta.data, (x, gamma, beta), backward)
