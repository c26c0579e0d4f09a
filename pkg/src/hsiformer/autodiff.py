"""Dense n-dimensional tensors with reverse-mode automatic differentiation.

Eager numpy arithmetic: each differentiable primitive computes its result
immediately and, while a tape is recording, appends a node carrying a
vector-Jacobian closure. One reverse sweep over the tape then yields
gradients for every leaf that requires them. Tensors are immutable after
creation; training rebinds parameters to fresh tensors instead of mutating
them in place.

Float64 is the working precision; float32 is available as an opt-in
inference mode (gradient checks need the float64 headroom). Elementwise
binary ops accept equal shapes or a scalar operand; any other broadcast
must be made explicit through :func:`broadcast_to`, which keeps the
gradient code auditable. Only first derivatives are supported: the tape
cannot be differentiated a second time, so higher-level code that needs a
gradient as a forward-pass value must compute it in closed form from these
primitives.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sqrt",
    "relu",
    "sigmoid",
    "silu",
    "matmul",
    "transpose",
    "reshape",
    "broadcast_to",
    "concat",
    "where",
    "sum_",
    "mean",
    "max_reduce",
    "softmax",
    "logsumexp",
    "layernorm",
    "conv2d",
]

DEFAULT_DTYPE = np.float64

_STATE = threading.local()


def _active_tape() -> Optional["Tape"]:
    return getattr(_STATE, "tape", None)


class Tensor:
    """Immutable dense array plus gradient bookkeeping.

    The public constructor copies its input, so a tensor never aliases
    caller-owned memory. Results of primitive ops are wrapped without a
    copy (they are freshly allocated) and marked read-only either way.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, np.ndarray):
            want = dtype or (data.dtype if data.dtype in (np.float32, np.float64) else DEFAULT_DTYPE)
            arr = data.astype(want, copy=True)
        else:
            arr = np.array(data, dtype=dtype or DEFAULT_DTYPE)
        self.data = arr
        self.data.flags.writeable = False
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional["Tape"] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(arr)
        try:
            out.data.flags.writeable = False
        except ValueError:
            pass  # read-only view already
        out.requires_grad = False
        out.grad = None
        out._tape = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; all route through the module-level primitives
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _getitem(self, key)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


class _Node:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out: Tensor, parents: tuple, vjp: Callable):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class Tape:
    """Ordered record of primitive ops; nodes appear in execution order,
    which is already topological. Single-writer: one tape per thread."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._produced: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise ContractError("a tape is already recording on this thread")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = None
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> dict:
        """Reverse sweep from ``loss``; returns a map of leaf Tensor -> gradient.

        Every tensor reached by the sweep also gets its ``.grad`` set.
        Calling backward twice on the same tape is an error: the saved
        forward values are only guaranteed for one sweep.
        """
        if self._consumed:
            raise ContractError("backward was already called on this tape; record a fresh tape")
        if not self._nodes:
            raise ContractError("tape is empty; nothing was recorded")
        if loss.data.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True

        entries: dict[int, list] = {id(loss): [loss, np.ones((), dtype=loss.data.dtype)]}
        for node in reversed(self._nodes):
            ent = entries.get(id(node.out))
            if ent is None:
                continue
            out_grad = ent[1]
            for parent, pgrad in zip(node.parents, node.vjp(out_grad)):
                if pgrad is None or not parent.requires_grad:
                    continue
                pent = entries.get(id(parent))
                if pent is None:
                    entries[id(parent)] = [parent, pgrad]
                else:
                    pent[1] = pent[1] + pgrad

        leaf_grads: dict[Tensor, np.ndarray] = {}
        for tid, (tensor, grad) in entries.items():
            tensor.grad = grad
            if tid not in self._produced:
                leaf_grads[tensor] = grad
        return leaf_grads


def backward(loss: Tensor) -> dict:
    """Run the reverse sweep on the tape that recorded ``loss``."""
    if loss._tape is None:
        raise ContractError("loss was not recorded on any tape")
    return loss._tape.backward(loss)


def _emit(out_data: np.ndarray, parents: tuple, vjp: Callable) -> Tensor:
    out = Tensor._wrap(out_data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._tape = tape
        tape._nodes.append(_Node(out, parents, vjp))
        tape._produced.add(id(out))
    return out


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _coerce_pair(a, b):
    if isinstance(a, Tensor):
        return a, _as_tensor(b, a)
    if isinstance(b, Tensor):
        return _as_tensor(a, b), b
    raise TypeError("at least one operand must be a Tensor")


def _sum_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Invert numpy broadcasting: reduce ``grad`` back to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squash = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if squash:
        grad = grad.sum(axis=squash, keepdims=True)
    return grad.reshape(shape)


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise ShapeError(f"{op} needs equal shapes or a scalar operand, got {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_elementwise(a, b, "add")
    out = a.data + b.data

    def vjp(g):
        return _sum_to(g, a.shape), _sum_to(g, b.shape)

    return _emit(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_elementwise(a, b, "sub")
    out = a.data - b.data

    def vjp(g):
        return _sum_to(g, a.shape), _sum_to(-g, b.shape)

    return _emit(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_elementwise(a, b, "mul")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _sum_to(g * bd, a.shape), _sum_to(g * ad, b.shape)

    return _emit(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    _check_elementwise(a, b, "div")
    out = a.data / b.data
    ad, bd = a.data, b.data

    def vjp(g):
        return _sum_to(g / bd, a.shape), _sum_to(-g * ad / (bd * bd), b.shape)

    return _emit(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        return (-g,)

    return _emit(-a.data, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _emit(out, (a,), vjp)


def log(a: Tensor) -> Tensor:
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return _emit(np.log(ad), (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def vjp(g):
        return (g / (2.0 * out),)

    return _emit(out, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return _emit(np.where(mask, a.data, 0.0), (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _emit(out, (a,), vjp)


def silu(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    ad = a.data

    def vjp(g):
        return (g * s * (1.0 + ad * (1.0 - s)),)

    return _emit(ad * s, (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as ex:
        raise ShapeError(f"matmul batch extents incompatible: {a.shape} @ {b.shape}") from ex
    ad, bd = a.data, b.data

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _sum_to(ga, a.shape), _sum_to(gb, b.shape)

    return _emit(out, (a, b), vjp)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if a.data.ndim < 2:
        raise ShapeError(f"transpose needs >= 2 dims, got shape {a.shape}")
    if axes is None:
        perm = list(range(a.data.ndim))
        perm[-2], perm[-1] = perm[-1], perm[-2]
    else:
        perm = list(axes)
    inv = np.argsort(perm)

    def vjp(g):
        return (np.transpose(g, inv),)

    return _emit(np.transpose(a.data, perm), (a,), vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.reshape(a.data, shape)
    except ValueError as ex:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from ex
    old = a.shape

    def vjp(g):
        return (np.reshape(g, old),)

    return _emit(out, (a,), vjp)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as ex:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from ex
    old = a.shape

    def vjp(g):
        return (_sum_to(g, old),)

    return _emit(out, (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    extents = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(moved[offsets[i] : offsets[i + 1]], 0, axis) for i in range(len(tensors))
        )

    return _emit(out, tuple(tensors), vjp)


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where ``mask`` is true else ``b``; ``mask`` is a constant
    boolean array. Selected entries are copied bit-exactly."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape or a.shape != b.shape:
        raise ShapeError(f"where needs equal shapes, got mask {mask.shape}, {a.shape}, {b.shape}")
    out = np.where(mask, a.data, b.data)

    def vjp(g):
        return g * mask, g * ~mask

    return _emit(out, (a, b), vjp)


def _getitem(a: Tensor, key) -> Tensor:
    out = a.data[key]
    shape = a.shape
    dtype = a.data.dtype

    def vjp(g):
        z = np.zeros(shape, dtype=dtype)
        z[key] = g
        return (z,)

    return _emit(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(out, (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    shape = a.shape
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([shape[i] for i in axis]))
    else:
        count = shape[axis]

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape) / count,)

    return _emit(out, (a,), vjp)


def max_reduce(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Max along one axis (or global). Gradient routes to the first maximum,
    which keeps backward deterministic under ties."""
    out = np.max(a.data, axis=axis, keepdims=keepdims)
    shape = a.shape
    dtype = a.data.dtype
    if axis is None:
        flat_idx = int(np.argmax(a.data))

        def vjp(g):
            z = np.zeros(shape, dtype=dtype)
            z.ravel()[flat_idx] = np.asarray(g).reshape(())
            return (z,)

    else:
        idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)

        def vjp(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            z = np.zeros(shape, dtype=dtype)
            np.put_along_axis(z, idx, g, axis=axis)
            return (z,)

    return _emit(out, (a,), vjp)


def _norm_axis(axis: int, ndim: int) -> int:
    return axis + ndim if axis < 0 else axis


def _diag_mask(shape: tuple) -> np.ndarray:
    n = shape[-1]
    eye = np.eye(n, dtype=bool)
    return np.broadcast_to(eye, shape)


def _check_exclude_diagonal(a: Tensor, axis: int, op: str) -> None:
    if a.data.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"{op} with exclude_diagonal needs a square trailing pair, got {a.shape}")
    if _norm_axis(axis, a.data.ndim) != a.data.ndim - 2:
        raise ShapeError(f"{op} with exclude_diagonal reduces over axis -2, got axis {axis}")
    if a.shape[-2] < 2:
        raise ContractError(f"{op} with exclude_diagonal needs extent >= 2, got {a.shape}")


def softmax(a: Tensor, axis: int = -1, exclude_diagonal: bool = False) -> Tensor:
    ax = _norm_axis(axis, a.data.ndim)
    if ax >= a.data.ndim or a.shape[ax] == 0:
        raise ShapeError(f"softmax over invalid axis {axis} for shape {a.shape}")
    if exclude_diagonal:
        _check_exclude_diagonal(a, axis, "softmax")
        work = np.where(_diag_mask(a.shape), -np.inf, a.data)
    else:
        work = a.data
    shifted = work - np.max(work, axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=ax, keepdims=True)

    def vjp(g):
        inner = np.sum(g * y, axis=ax, keepdims=True)
        return (y * (g - inner),)

    return _emit(y, (a,), vjp)


def logsumexp(a: Tensor, axis: int, keepdims: bool = False, exclude_diagonal: bool = False) -> Tensor:
    """Max-shifted log-sum-exp along ``axis``. With ``exclude_diagonal`` the
    entry B == C is omitted from the reduction at column C (trailing pair
    must be square and the reduction axis must be -2)."""
    ax = _norm_axis(axis, a.data.ndim)
    if ax >= a.data.ndim or a.shape[ax] == 0:
        raise ShapeError(f"logsumexp over invalid axis {axis} for shape {a.shape}")
    if exclude_diagonal:
        _check_exclude_diagonal(a, axis, "logsumexp")
        work = np.where(_diag_mask(a.shape), -np.inf, a.data)
    else:
        work = a.data
    m = np.max(work, axis=ax, keepdims=True)
    e = np.exp(work - m)
    s = np.sum(e, axis=ax, keepdims=True)
    out = np.log(s) + m
    soft = e / s
    if not keepdims:
        out = np.squeeze(out, axis=ax)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (g * soft,)

    return _emit(out, (a,), vjp)


def layernorm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then apply
    the affine pair (gamma, beta)."""
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm affine shapes {gamma.shape}/{beta.shape} do not match feature extent {d}")
    mu = np.mean(a.data, axis=-1, keepdims=True)
    centered = a.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    s = np.sqrt(var + eps)
    xhat = centered / s
    out = gamma.data * xhat + beta.data
    gdata = gamma.data

    def vjp(g):
        w = g * gdata
        da = (w - np.mean(w, axis=-1, keepdims=True) - xhat * np.mean(w * xhat, axis=-1, keepdims=True)) / s
        batch_axes = tuple(range(g.ndim - 1))
        dgamma = np.sum(g * xhat, axis=batch_axes)
        dbeta = np.sum(g, axis=batch_axes)
        return da, dgamma, dbeta

    return _emit(out, (a, gamma, beta), vjp)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """2-D convolution, NHWC layout, stride 1, zero-padded 'same' output.

    ``x``: (B, H, W, Cin); ``kernel``: (kh, kw, Cin, Cout); optional
    ``bias``: (Cout,). The only configuration the model needs, so strides
    and other paddings are deliberately unsupported.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d needs 4-d input and kernel, got {x.shape} and {kernel.shape}")
    if x.shape[3] != kernel.shape[2]:
        raise ShapeError(f"conv2d channel extents disagree: input {x.shape} vs kernel {kernel.shape}")
    b, h, w, cin = x.shape
    kh, kw, _, cout = kernel.shape
    pt, pl = (kh - 1) // 2, (kw - 1) // 2
    pb, pr = kh - 1 - pt, kw - 1 - pl
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    out = np.zeros((b, h, w, cout), dtype=x.data.dtype)
    for di in range(kh):
        for dj in range(kw):
            out += np.matmul(xp[:, di : di + h, dj : dj + w, :], kernel.data[di, dj])
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d bias shape {bias.shape} does not match output channels {cout}")
        out = out + bias.data
    kd = kernel.data

    def vjp(g):
        dxp = np.zeros_like(xp)
        dk = np.zeros_like(kd)
        for di in range(kh):
            for dj in range(kw):
                patch = xp[:, di : di + h, dj : dj + w, :]
                dk[di, dj] = np.tensordot(patch, g, axes=([0, 1, 2], [0, 1, 2]))
                dxp[:, di : di + h, dj : dj + w, :] += np.matmul(g, kd[di, dj].T)
        dx = dxp[:, pt : pt + h, pl : pl + w, :]
        if bias is not None:
            return dx, dk, g.sum(axis=(0, 1, 2))
        return dx, dk

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _emit(out, parents, vjp)
