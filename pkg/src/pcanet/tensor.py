"""Dense tensors with a reverse-mode tape.

Every differentiable operation records a :class:`TapeNode` holding its inputs
and whatever forward-time context the backward rule needs.  ``backward`` walks
the nodes reachable from a scalar loss in reverse construction order and
accumulates gradients into the leaves.

Values are stored as numpy arrays.  Computation runs in 32-bit floats unless
64-bit mode is switched on with :func:`precision` (used by gradient checks).
"""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numba
import numpy as np

__all__ = [
    "Tensor",
    "TapeNode",
    "DimensionError",
    "apply_op",
    "precision",
    "get_dtype",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "ancestors",
    "depends_on",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "getitem",
    "concat",
    "tsum",
    "mean",
    "relu",
    "softmax_rows",
    "signed_sqrt",
    "l2_normalize",
    "conv2d",
    "maxpool2d",
    "global_avg_pool",
    "upsample_bilinear",
    "grad_check",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


_DTYPE = np.float32
_GRAD_ENABLED = True
_NODE_IDS = itertools.count()


def get_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(bits: int | str) -> Iterator[None]:
    """Temporarily switch new tensors to 32- or 64-bit floats."""
    global _DTYPE
    dtype = {32: np.float32, 64: np.float64, "float32": np.float32,
             "float64": np.float64}[bits]
    prev = _DTYPE
    _DTYPE = dtype
    try:
        yield
    finally:
        _DTYPE = prev


def set_precision(bits: int | str) -> None:
    global _DTYPE
    _DTYPE = {32: np.float32, 64: np.float64, "float32": np.float32,
              "float64": np.float64}[bits]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@dataclass(eq=False)
class TapeNode:
    op_name: str
    inputs: tuple["Tensor", ...]
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    saved_context: dict = field(default_factory=dict)
    index: int = field(default_factory=lambda: next(_NODE_IDS))
    released: bool = False


class Tensor:
    """An n-dimensional array that can take part in differentiation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: TapeNode | None = None

    # -- metadata -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)


def _raise_not_scalar(t: Tensor):
    raise DimensionError(f"expected a single-element tensor, got shape {t.shape}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply_op(op_name: str, out: np.ndarray, inputs: Sequence[Tensor],
             backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
             **saved) -> Tensor:
    """Wrap ``out`` in a tensor and record it on the tape when needed.

    ``backward_fn`` maps the output gradient to one gradient (or None) per
    input.  Non-finite forward results raise ``FloatingPointError``.
    """
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{op_name}: non-finite values in result")
    result = Tensor(out, dtype=out.dtype)
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result.node = TapeNode(op_name, tuple(inputs), backward_fn, saved)
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ----------------------------------------------------------------------
# graph traversal
# ----------------------------------------------------------------------

def _graph(root: Tensor) -> list[Tensor]:
    """Tensors with tape nodes reachable from ``root`` in reverse construction order."""
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.node is None or id(t) in seen:
            continue
        seen[id(t)] = t
        stack.extend(t.node.inputs)
    return sorted(seen.values(), key=lambda t: t.node.index, reverse=True)


def ancestors(t: Tensor) -> list[TapeNode]:
    """Tape nodes that ``t`` was computed from, newest first (``t``'s own node included)."""
    return [x.node for x in _graph(t)]


def depends_on(t: Tensor, other: Tensor) -> bool:
    """True if the tape holds a path from ``other`` to ``t``."""
    if t is other:
        return True
    for x in _graph(t):
        if any(inp is other for inp in x.node.inputs):
            return True
    return False


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that requires it with d loss / d leaf."""
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("backward called on a tensor that is detached from the tape")
    seed = np.ones_like(loss.data)
    if loss.node is None:
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    order = _graph(loss)
    if any(t.node.released for t in order):
        raise RuntimeError("backward already ran through this graph; rebuild it first")
    grads: dict[int, np.ndarray] = {id(loss): seed}
    for t in order:
        g = grads.pop(id(t), None)
        node = t.node
        if g is not None:
            in_grads = node.backward_fn(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.node is None:
                    inp.grad = gi.astype(inp.dtype, copy=True) if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    grads[key] = gi if key not in grads else grads[key] + gi
        node.released = True
        node.saved_context = {}


# ----------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    return apply_op("add", a.data + b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    return apply_op("sub", a.data - b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return apply_op("mul", ad * bd, (a, b),
                    lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def neg(a: Tensor) -> Tensor:
    return apply_op("neg", -a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return apply_op("scale", a.data * a.dtype.type(s), (a,), lambda g: (g * g.dtype.type(s),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return apply_op("relu", out, (a,), lambda g: (g * (out > 0),))


# ----------------------------------------------------------------------
# shape manipulation
# ----------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return apply_op("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    if axes is None:
        if a.ndim < 2:
            raise DimensionError(f"transpose needs at least 2 dims, got {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return apply_op("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)
    return apply_op("getitem", np.array(a.data[idx]), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return apply_op("concat", out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)
    return apply_op("sum", out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ----------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dimensions broadcast as batch dimensions."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    ad, bd = a.data, b.data
    try:
        out = np.matmul(ad, bd)
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} differ") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))
    return apply_op("matmul", out, (a, b), bw)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis, shifted by the row max."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
    return apply_op("softmax_rows", y, (x,), bw)


def signed_sqrt(x: Tensor) -> Tensor:
    # derivative taken as 0 at exactly 0, matching sign(0) = 0
    r = np.sqrt(np.abs(x.data))
    y = np.sign(x.data) * r

    def bw(g):
        d = np.zeros_like(r)
        nz = r > 0
        d[nz] = 0.5 / r[nz]
        return (g * d,)
    return apply_op("signed_sqrt", y, (x,), bw)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row (last axis) to unit Euclidean norm, dividing by max(norm, eps)."""
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    y = x.data / denom

    def bw(g):
        proj = (g * y).sum(axis=-1, keepdims=True)
        return (np.where(norm > eps, (g - y * proj) / denom, g / denom),)
    return apply_op("l2_normalize", y, (x,), bw)


# ----------------------------------------------------------------------
# convolution and pooling
# ----------------------------------------------------------------------

@numba.njit(cache=True)
def _im2col(x, kh, kw, s, p, ho, wo, cols):  # pragma: no cover - compiled
    # cols[n, (ci, i, j), (oy, ox)] = padded x[n, ci, oy*s + i, ox*s + j]
    b, c, h, w = x.shape
    for n in range(b):
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    for oy in range(ho):
                        iy = oy * s + i - p
                        base = oy * wo
                        if iy < 0 or iy >= h:
                            for ox in range(wo):
                                cols[n, row, base + ox] = 0
                            continue
                        for ox in range(wo):
                            ix = ox * s + j - p
                            cols[n, row, base + ox] = x[n, ci, iy, ix] if 0 <= ix < w else 0


@numba.njit(cache=True)
def _col2im(gcols, kh, kw, s, p, ho, wo, gx):  # pragma: no cover - compiled
    b, c, h, w = gx.shape
    for n in range(b):
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    for oy in range(ho):
                        iy = oy * s + i - p
                        if iy < 0 or iy >= h:
                            continue
                        base = oy * wo
                        for ox in range(wo):
                            ix = ox * s + j - p
                            if 0 <= ix < w:
                                gx[n, ci, iy, ix] += gcols[n, row, base + ox]


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0,
           bias: Tensor | None = None) -> Tensor:
    """Cross-correlation of ``x`` (b, c_in, h, w) with ``kernels`` (c_out, c_in, kh, kw).

    Zero padding on all four sides; output size ``(h + 2*padding - kh) // stride + 1``.
    """
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-d input and kernels, got {x.shape} and {kernels.shape}")
    b, c, h, w = x.shape
    o, ck, kh, kw = kernels.shape
    if ck != c:
        raise DimensionError(f"conv2d: input has {c} channels, kernels {kernels.shape} expect {ck}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv2d: invalid stride {stride} / padding {padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    dt = np.result_type(x.dtype, kernels.dtype)

    xd = np.ascontiguousarray(x.data, dtype=dt)
    cols = np.empty((b, c * kh * kw, ho * wo), dtype=dt)
    _im2col(xd, kh, kw, stride, padding, ho, wo, cols)
    kmat = kernels.data.reshape(o, -1).astype(dt, copy=False)
    out = np.matmul(kmat, cols)
    if bias is not None:
        if bias.shape != (o,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} != ({o},)")
        out += bias.data[:, None].astype(dt, copy=False)
    out = out.reshape(b, o, ho, wo)

    def bw(g):
        gm = np.ascontiguousarray(g).reshape(b, o, ho * wo)
        gx = gk = gb = None
        if kernels.requires_grad:
            gk = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernels.shape)
        if bias is not None and bias.requires_grad:
            gb = gm.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(kmat.T, gm)
            gx = np.zeros((b, c, h, w), dtype=gcols.dtype)
            _col2im(gcols, kh, kw, stride, padding, ho, wo, gx)
        return (gx, gk) if bias is None else (gx, gk, gb)

    inputs = (x, kernels) if bias is None else (x, kernels, bias)
    return apply_op("conv2d", out, inputs, bw, stride=stride, padding=padding)


@numba.njit(cache=True)
def _pool_forward(x, k, s, out, arg):  # pragma: no cover - compiled
    n, ho, wo = out.shape
    for a in range(n):
        for i in range(ho):
            for j in range(wo):
                best = x[a, i * s, j * s]
                bk = 0
                for di in range(k):
                    for dj in range(k):
                        v = x[a, i * s + di, j * s + dj]
                        if v > best:
                            best = v
                            bk = di * k + dj
                out[a, i, j] = best
                arg[a, i, j] = bk


@numba.njit(cache=True)
def _pool_backward(g, arg, k, s, gx):  # pragma: no cover - compiled
    n, ho, wo = g.shape
    for a in range(n):
        for i in range(ho):
            for j in range(wo):
                kk = arg[a, i, j]
                gx[a, i * s + kk // k, j * s + kk % k] += g[a, i, j]


def maxpool2d(x: Tensor, kernel: int = 2, stride: int | None = None) -> Tensor:
    """Max pooling over the last two axes; ties route the gradient to the lowest flat index."""
    stride = kernel if stride is None else stride
    if x.ndim < 2 or kernel < 1 or stride < 1 or min(x.shape[-2:]) < kernel:
        raise DimensionError(f"maxpool2d: window {kernel} (stride {stride}) does not fit input {x.shape}")
    *lead, h, w = x.shape
    ho, wo = (h - kernel) // stride + 1, (w - kernel) // stride + 1
    flat = np.ascontiguousarray(x.data).reshape(-1, h, w)
    out = np.empty((flat.shape[0], ho, wo), dtype=x.dtype)
    arg = np.empty(out.shape, dtype=np.int32)
    _pool_forward(flat, kernel, stride, out, arg)

    def bw(g):
        gx = np.zeros(flat.shape, dtype=g.dtype)
        _pool_backward(np.ascontiguousarray(g).reshape(out.shape), arg, kernel, stride, gx)
        return (gx.reshape(x.shape),)
    return apply_op("maxpool2d", out.reshape(*lead, ho, wo), (x,), bw, argmax=arg)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the last two (spatial) axes: (..., c, h, w) -> (..., c)."""
    if x.ndim < 3:
        raise DimensionError(f"global_avg_pool: expected (..., c, h, w), got {x.shape}")
    h, w = x.shape[-2:]
    inv = 1.0 / (h * w)

    def bw(g):
        return (np.broadcast_to(g[..., None, None] * g.dtype.type(inv), x.shape).copy(),)
    return apply_op("global_avg_pool", x.data.mean(axis=(-2, -1)), (x,), bw)


def upsample_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes with half-pixel centres and edge clamping.

    Forward only: the result is never on the tape.
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"upsample_bilinear: target size {out_h}x{out_w} must be positive")
    h, w = data.shape[-2:]
    if h < 1 or w < 1:
        raise DimensionError(f"upsample_bilinear: empty source {data.shape}")
    y0, y1, fy = _interp_axis(h, out_h)
    x0, x1, fx = _interp_axis(w, out_w)
    dt = data.dtype if np.issubdtype(data.dtype, np.floating) else _DTYPE
    fy = fy.astype(dt)[:, None]
    fx = fx.astype(dt)[None, :]
    top = data[..., y0, :]
    bot = data[..., y1, :]
    rows = top + (bot - top) * fy
    left = rows[..., :, x0]
    right = rows[..., :, x1]
    return Tensor(left + (right - left) * fx, dtype=dt)


def _interp_axis(n_in: int, n_out: int):
    d = np.arange(n_out, dtype=np.float64)
    s = np.clip((d + 0.5) * (n_in / n_out) - 0.5, 0.0, n_in - 1)
    i0 = np.floor(s).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, s - i0


# ----------------------------------------------------------------------
# gradient checking
# ----------------------------------------------------------------------

def grad_check(f: Callable[..., Tensor], x: Tensor | Iterable[Tensor], eps: float = 1e-4) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` receives the tensor(s) in ``x`` (cast to 64-bit copies) and must
    return a scalar tensor.  The error per element is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    with precision(64):
        leaves = [Tensor(t.data.astype(np.float64), requires_grad=True) for t in xs]
        backward(f(*leaves))
        worst = 0.0
        for leaf in leaves:
            analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
            flat = leaf.data.reshape(-1)
            numeric = np.empty(flat.size)
            with no_grad():
                for k in range(flat.size):
                    orig = flat[k]
                    flat[k] = orig + eps
                    hi = f(*leaves).item()
                    flat[k] = orig - eps
                    lo = f(*leaves).item()
                    flat[k] = orig
                    numeric[k] = (hi - lo) / (2 * eps)
            a = analytic.reshape(-1)
            err = np.abs(a - numeric) / np.maximum(1e-8, np.abs(a) + np.abs(numeric))
            worst = max(worst, float(err.max(initial=0.0)))
    return worst
