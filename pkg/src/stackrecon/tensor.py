"""Dense tensors with tape-based reverse-mode automatic differentiation.

Values live in numpy arrays; every differentiable operation records a node
carrying its parents and a closure that maps the output gradient to input
gradients.  ``backward`` replays the recorded nodes once, in reverse
execution order.

Volumes are laid out channel-first: ``[C, D, H, W]`` for a single sample or
``[N, C, D, H, W]`` for a batch.  Convolutions accept either layout.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_sequence = itertools.count()
_grad_enabled = True
_branch_log: list[np.ndarray] | None = None


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them on the tape."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


@contextlib.contextmanager
def record_branches() -> Iterator[list[np.ndarray]]:
    """Collect the branch masks of every piecewise op run inside the block.

    Two evaluations with equal masks lie in the same smooth piece of the
    function, which is what a finite-difference stencil needs.
    """
    global _branch_log
    previous, _branch_log = _branch_log, []
    try:
        yield _branch_log
    finally:
        _branch_log = previous


def _log_branch(mask: np.ndarray) -> None:
    if _branch_log is not None:
        _branch_log.append(mask)


class Tensor:
    """N-dimensional real array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = next(_sequence)
        self.op = "leaf"

    # -- construction -----------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
        if not np.all(np.isfinite(data)):
            raise NonFiniteError(f"{op} produced non-finite values")
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out._seq = next(_sequence)
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- operators --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if np.isscalar(other):
            return mul_scalar(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def sum(self) -> Tensor:
        return tensor_sum(self)

    def mean(self) -> Tensor:
        return tensor_mean(self)

    def backward(self) -> None:
        backward(self)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, getattr(a, "dtype", None))
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add",
    )


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, getattr(a, "dtype", None))
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g * b.data, sa), _unbroadcast(g * a.data, sb)

    return Tensor._from_op(a.data * b.data, (a, b), grad_fn, "mul")


def mul_scalar(a: Tensor, c: float) -> Tensor:
    return Tensor._from_op(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _log_branch(mask)
    return Tensor._from_op(np.where(mask, x.data, 0.0).astype(x.dtype), (x,),
                           lambda g: (g * mask,), "relu")


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    _log_branch(x.data > 0)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return Tensor._from_op(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(z))
    y = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return Tensor._from_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tensor_sum(x: Tensor) -> Tensor:
    shape = x.shape
    return Tensor._from_op(np.asarray(x.data.sum()), (x,),
                           lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def tensor_mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.size
    return Tensor._from_op(np.asarray(x.data.mean()), (x,),
                           lambda g: (np.broadcast_to(g / n, shape).copy(),), "mean")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    return Tensor._from_op(x.data.reshape(shape), (x,),
                           lambda g: (g.reshape(original),), "reshape")


def root_abs_loss(pred: Tensor, target, eps: float = 1e-4) -> Tensor:
    """Mean of ``sqrt(|pred - target| + eps) - sqrt(eps)``.

    The ``eps`` shift keeps the derivative bounded at zero residual; the
    subtraction makes a perfect prediction score exactly zero.
    """
    target = _as_tensor(target, pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"root_abs_loss shape mismatch: {pred.shape} vs {target.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    r = pred.data - target.data
    _log_branch(r > 0)
    root = np.sqrt(np.abs(r) + eps)
    value = np.asarray(np.mean(root - np.sqrt(eps)), dtype=pred.dtype)
    n = r.size

    def grad_fn(g):
        d = g * np.sign(r) / (2.0 * root * n)
        return d, -d

    return Tensor._from_op(value, (pred, target), grad_fn, "root_abs_loss")


# -- convolution ------------------------------------------------------------


def _out_extent(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _strided_windows(xp: np.ndarray, k: int, s: int, out: tuple[int, int, int]) -> np.ndarray:
    """View of shape [N, C, Do, Ho, Wo, k, k, k] over a padded volume."""
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
    return win[:, :, : (out[0] - 1) * s + 1 : s, : (out[1] - 1) * s + 1 : s, : (out[2] - 1) * s + 1 : s]


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))


def _correlate(x: np.ndarray, w: np.ndarray, s: int, p: int) -> np.ndarray:
    """Strided cross-correlation; x [N,C,D,H,W], w [O,C,k,k,k] -> [N,O,Do,Ho,Wo]."""
    k = w.shape[-1]
    out = tuple(_out_extent(n, k, s, p) for n in x.shape[2:])
    win = _strided_windows(_pad(x, p), k, s, out)
    y = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    return np.ascontiguousarray(y.transpose(0, 4, 1, 2, 3))


def _correlate_weight_grad(x: np.ndarray, gy: np.ndarray, k: int, s: int, p: int) -> np.ndarray:
    """d/dw of sum(gy * correlate(x, w)); returns [O,C,k,k,k]."""
    win = _strided_windows(_pad(x, p), k, s, gy.shape[2:])
    return np.tensordot(gy, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))


def _scatter(cols: np.ndarray, k: int, s: int, p: int, out: tuple[int, int, int]) -> np.ndarray:
    """Adjoint of windowing.

    cols [N, Di, Hi, Wi, C, k, k, k] is summed into a zero volume so that
    input cell (d, h, w) tap (a, b, c) lands at (d*s + a - p, ...).  The
    result is cropped to ``out``.
    """
    n, di, hi, wi, c = cols.shape[:5]
    full = [max((m - 1) * s + k, o + p) for m, o in zip((di, hi, wi), out)]
    buf = np.zeros((n, c, *full), dtype=cols.dtype)
    cols = cols.transpose(0, 4, 5, 6, 7, 1, 2, 3)  # N C ka kb kc Di Hi Wi
    for a in range(k):
        for b in range(k):
            for cc in range(k):
                buf[:, :, a : a + (di - 1) * s + 1 : s,
                          b : b + (hi - 1) * s + 1 : s,
                          cc : cc + (wi - 1) * s + 1 : s] += cols[:, :, a, b, cc]
    return buf[:, :, p : p + out[0], p : p + out[1], p : p + out[2]]


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.data.ndim == 4:
        return reshape(x, (1, *x.shape)), True
    if x.data.ndim == 5:
        return x, False
    raise ValueError(f"expected [C,D,H,W] or [N,C,D,H,W], got shape {x.shape}")


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """3D cross-correlation with zero padding.

    x is [C_in, D, H, W] (or batched), weight [C_out, C_in, k, k, k],
    bias [C_out].  Output extents are ``(n + 2p - k) // s + 1``.
    """
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be non-negative, got {padding}")
    xb, squeeze = _batched(x)
    w = weight.data
    if w.ndim != 5 or w.shape[2] != w.shape[3] or w.shape[3] != w.shape[4]:
        raise ValueError(f"weight must be [C_out, C_in, k, k, k], got {w.shape}")
    if w.shape[1] != xb.shape[1]:
        raise ValueError(f"conv3d channel mismatch: input has {xb.shape[1]}, weight expects {w.shape[1]}")
    k = w.shape[-1]
    for extent in xb.shape[2:]:
        if extent + 2 * padding < k:
            raise ValueError(f"conv3d input extent {extent} with padding {padding} is smaller than kernel {k}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ValueError(f"bias must have shape ({w.shape[0]},), got {bias.shape}")

    xd = xb.data
    y = _correlate(xd, w, stride, padding)
    if bias is not None:
        y += bias.data[None, :, None, None, None]
    in_spatial = xd.shape[2:]

    def grad_fn(g):
        gx = _scatter(np.tensordot(g, w, axes=([1], [0])), k, stride, padding, in_spatial)
        gw = _correlate_weight_grad(xd, g, k, stride, padding)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return grads

    parents = (xb, weight) if bias is None else (xb, weight, bias)
    out = Tensor._from_op(y, parents, grad_fn, "conv3d")
    return reshape(out, out.shape[1:]) if squeeze else out


def conv_transpose3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed 3D convolution, the adjoint of :func:`conv3d`.

    weight is [C_in, C_out, k, k, k]; output extent is
    ``(n - 1) * s - 2p + k + output_padding``.
    """
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if not 0 <= output_padding < stride:
        raise ValueError(f"output_padding must satisfy 0 <= op < stride, got op={output_padding}, s={stride}")
    xb, squeeze = _batched(x)
    w = weight.data
    if w.ndim != 5 or w.shape[2] != w.shape[3] or w.shape[3] != w.shape[4]:
        raise ValueError(f"weight must be [C_in, C_out, k, k, k], got {w.shape}")
    if w.shape[0] != xb.shape[1]:
        raise ValueError(f"conv_transpose3d channel mismatch: input has {xb.shape[1]}, weight expects {w.shape[0]}")
    if bias is not None and bias.shape != (w.shape[1],):
        raise ValueError(f"bias must have shape ({w.shape[1]},), got {bias.shape}")
    k = w.shape[-1]
    out = tuple((n - 1) * stride - 2 * padding + k + output_padding for n in xb.shape[2:])
    if min(out) < 1:
        raise ValueError(f"conv_transpose3d output extents {out} are not positive")

    xd = xb.data
    cols = np.tensordot(xd, w, axes=([1], [0]))  # N D H W C_out k k k
    y = np.ascontiguousarray(_scatter(cols, k, stride, padding, out))
    if bias is not None:
        y += bias.data[None, :, None, None, None]

    def grad_fn(g):
        gx = _correlate(g, w, stride, padding)
        gw = _correlate_weight_grad(g, xd, k, stride, padding)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return grads

    parents = (xb, weight) if bias is None else (xb, weight, bias)
    result = Tensor._from_op(y, parents, grad_fn, "conv_transpose3d")
    return reshape(result, result.shape[1:]) if squeeze else result


# -- reverse pass -----------------------------------------------------------


def build_tape(loss: Tensor) -> list[Tensor]:
    """Nodes reachable from ``loss`` in execution order."""
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(p for p in t._parents if p.requires_grad)
    nodes.sort(key=lambda t: t._seq)
    return nodes


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss is detached from the graph: no input requires grad")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(build_tape(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
