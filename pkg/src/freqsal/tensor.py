"""Dense tensors with broadcasting, reductions, bilinear resizing, 3-D
convolution, and a reverse-mode differentiation tape.

Compute dtype is float64 throughout (complex128 for spectra); float32
exists only at the file-format boundary. Operations executed while a
``Tape`` is open are recorded so ``Tape.backward`` can produce gradients
for every watched leaf.
"""

from __future__ import annotations

import threading
from itertools import product

import numpy as np

REAL_DTYPE = np.float64
COMPLEX_DTYPE = np.complex128

_tls = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def _active_tape():
    return getattr(_tls, "tape", None)


class Tensor:
    """Dense array tracked by the differentiation tape.

    Treated as immutable by all operations; optimizers may update
    parameter ``data`` in place between tape lifetimes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape", "_pairs")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind == "c":
            arr = arr.astype(COMPLEX_DTYPE)
        else:
            arr = arr.astype(REAL_DTYPE)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"all extents must be >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor elements must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None
        self._pairs = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal fast path: no validation, no copies
        t = object.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._tape = None
        t._pairs = None
        return t

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
    def is_complex(self) -> bool:
        return self.data.dtype.kind == "c"

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() requires a scalar tensor, got shape {self.shape}")
        return self.data.reshape(()).item()

    def detach(self) -> "Tensor":
        """A copy of this tensor cut off from any tape."""
        return Tensor._wrap(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of operations for one reverse-mode pass.

    One tape per training step per execution context; nesting is not
    allowed. Forward values are saved eagerly inside each node's
    gradient closures.
    """

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._leaves: list[Tensor] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a Tape is already active in this execution context")
        _tls.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _tls.tape = None
        for t in self._nodes:
            t._tape = None
        for t in self._leaves:
            t._tape = None
        return False

    def watch(self, t: Tensor) -> None:
        """Register a leaf whose gradient should be reported."""
        if t._tape is not self:
            t._tape = self
            self._leaves.append(t)

    def _track(self, t: Tensor) -> bool:
        if t._tape is self:
            return True
        if t.requires_grad:
            self.watch(t)
            return True
        return False

    def _record(self, out: Tensor, pairs) -> None:
        out._pairs = pairs
        out._tape = self
        self._nodes.append(out)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulate gradients of a scalar loss for every watched leaf.

        Leaves not reachable from the loss receive zero gradients. Each
        recorded node is visited exactly once, in reverse creation order.
        """
        if loss.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g = grads.pop(id(node), None)
            if g is None or not node._pairs:
                continue
            for parent, vjp in node._pairs:
                contrib = vjp(g)
                prev = grads.get(id(parent))
                grads[id(parent)] = contrib if prev is None else prev + contrib
        out: dict[Tensor, np.ndarray] = {}
        for leaf in self._leaves:
            g = grads.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.data)
            leaf.grad = g
            out[leaf] = g
        return out


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------

def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    """Trailing-aligned broadcast shape; extent 1 stretches to match."""
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {a} and {b} are not broadcast-compatible") from None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape of the pre-broadcast operand."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    squeezed = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if squeezed:
        g = g.sum(axis=squeezed, keepdims=True)
    return g


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=REAL_DTYPE))


def _require_real(t: Tensor, op: str) -> None:
    if t.is_complex:
        raise TypeError(f"{op} requires a real tensor; complex tensors only support power()")


def _finish(out: Tensor, *parent_vjps) -> Tensor:
    """Record out on the active tape for every tracked (parent, vjp) pair."""
    tape = _active_tape()
    if tape is None:
        return out
    pairs = [(p, vjp) for p, vjp in parent_vjps if tape._track(p)]
    if pairs:
        tape._record(out, pairs)
    return out


# ---------------------------------------------------------------------------
# elementwise operations
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _require_real(a, "add"), _require_real(b, "add")
    broadcast_shape(a.shape, b.shape)
    out = Tensor._wrap(a.data + b.data)
    return _finish(
        out,
        (a, lambda g, s=a.shape: _unbroadcast(g, s)),
        (b, lambda g, s=b.shape: _unbroadcast(g, s)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _require_real(a, "sub"), _require_real(b, "sub")
    broadcast_shape(a.shape, b.shape)
    out = Tensor._wrap(a.data - b.data)
    return _finish(
        out,
        (a, lambda g, s=a.shape: _unbroadcast(g, s)),
        (b, lambda g, s=b.shape: _unbroadcast(-g, s)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _require_real(a, "mul"), _require_real(b, "mul")
    broadcast_shape(a.shape, b.shape)
    out = Tensor._wrap(a.data * b.data)
    ad, bd = a.data, b.data
    return _finish(
        out,
        (a, lambda g, s=a.shape: _unbroadcast(g * bd, s)),
        (b, lambda g, s=b.shape: _unbroadcast(g * ad, s)),
    )


def square(a) -> Tensor:
    a = _as_tensor(a)
    _require_real(a, "square")
    ad = a.data
    out = Tensor._wrap(ad * ad)
    return _finish(out, (a, lambda g: g * (2.0 * ad)))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    _require_real(a, "scale")
    c = float(c)
    out = Tensor._wrap(a.data * c)
    return _finish(out, (a, lambda g: g * c))


def shifted_reciprocal(a) -> Tensor:
    """1 / (1 + a), with gradient -1 / (1 + a)^2."""
    a = _as_tensor(a)
    _require_real(a, "shifted_reciprocal")
    val = 1.0 / (1.0 + a.data)
    out = Tensor._wrap(val)
    return _finish(out, (a, lambda g: -g * val * val))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    _require_real(a, "tanh")
    t = np.tanh(a.data)
    out = Tensor._wrap(t)
    return _finish(out, (a, lambda g: g * (1.0 - t * t)))


def softplus(a) -> Tensor:
    """log(1 + exp(a)), a smooth rectifier."""
    a = _as_tensor(a)
    _require_real(a, "softplus")
    out = Tensor._wrap(np.logaddexp(0.0, a.data))
    # sigmoid, evaluated on the overflow-safe branch per sign
    ad = a.data
    ex = np.exp(-np.abs(ad))
    sig = np.where(ad >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return _finish(out, (a, lambda g: g * sig))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _normalize_axes(axis, ndim) -> tuple[int, ...] | None:
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    for ax in axes:
        if not 0 <= ax < ndim:
            raise IndexError(f"axis {ax} out of range for rank-{ndim} tensor")
    if len(set(axes)) != len(axes):
        raise IndexError(f"duplicate axes in {axes}")
    return axes


def reduce_sum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    _require_real(a, "reduce_sum")
    axes = _normalize_axes(axis, a.ndim)
    out = Tensor._wrap(a.data.sum(axis=axes))
    shape = a.shape

    def vjp(g):
        if axes is None:
            return np.full(shape, g, dtype=REAL_DTYPE)
        return np.broadcast_to(np.expand_dims(g, axes), shape).copy()

    return _finish(out, (a, vjp))


def reduce_mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    _require_real(a, "reduce_mean")
    axes = _normalize_axes(axis, a.ndim)
    out = Tensor._wrap(a.data.mean(axis=axes))
    shape = a.shape
    if axes is None:
        count = a.size
    else:
        count = 1
        for ax in axes:
            count *= shape[ax]

    def vjp(g):
        if axes is None:
            return np.full(shape, g / count, dtype=REAL_DTYPE)
        return np.broadcast_to(np.expand_dims(g / count, axes), shape).copy()

    return _finish(out, (a, vjp))


# ---------------------------------------------------------------------------
# bilinear resize
# ---------------------------------------------------------------------------

def _resize_plan(n_in: int, n_out: int):
    # corner-aligned source position for each output index
    if n_out == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(a, out_h: int, out_w: int) -> Tensor:
    """Corner-aligned bilinear resampling of a rank-2 map."""
    a = _as_tensor(a)
    _require_real(a, "resize_bilinear")
    if a.ndim != 2:
        raise ShapeError(f"resize_bilinear expects a rank-2 map, got shape {a.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target extents must be >= 1, got ({out_h}, {out_w})")
    h, w = a.shape
    if (out_h, out_w) == (h, w):
        out = Tensor._wrap(a.data.copy())
        return _finish(out, (a, lambda g: g))

    ly, hy, fy = _resize_plan(h, out_h)
    lx, hx, fx = _resize_plan(w, out_w)
    wy = fy[:, None]
    wx = fx[None, :]
    ad = a.data
    val = (1.0 - wy) * ((1.0 - wx) * ad[np.ix_(ly, lx)] + wx * ad[np.ix_(ly, hx)]) + wy * (
        (1.0 - wx) * ad[np.ix_(hy, lx)] + wx * ad[np.ix_(hy, hx)]
    )
    out = Tensor._wrap(val)

    def vjp(g):
        ga = np.zeros((h, w), dtype=REAL_DTYPE)
        np.add.at(ga, (ly[:, None], lx[None, :]), (1.0 - wy) * (1.0 - wx) * g)
        np.add.at(ga, (ly[:, None], hx[None, :]), (1.0 - wy) * wx * g)
        np.add.at(ga, (hy[:, None], lx[None, :]), wy * (1.0 - wx) * g)
        np.add.at(ga, (hy[:, None], hx[None, :]), wy * wx * g)
        return ga

    return _finish(out, (a, vjp))


# ---------------------------------------------------------------------------
# 3-D convolution (cross-correlation over the T/H/W axes)
# ---------------------------------------------------------------------------

def _triple(v, name: str) -> tuple[int, int, int]:
    if isinstance(v, int):
        v = (v, v, v)
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise ValueError(f"{name} must be an int or a 3-tuple, got {v}")
    return v


def _offset_view(arr, dt, dh, dw, stride, out_tdims):
    st, sh, sw = stride
    to, ho, wo = out_tdims
    return arr[
        dt : dt + st * (to - 1) + 1 : st,
        :,
        dh : dh + sh * (ho - 1) + 1 : sh,
        dw : dw + sw * (wo - 1) + 1 : sw,
    ]


def conv3d(x, kernel, stride=1, padding=0) -> Tensor:
    """Cross-correlate a [T,C,H,W] volume with a [K,C,kt,kh,kw] kernel.

    Output extents follow floor((in + 2*pad - k) / stride) + 1 on each of
    the T/H/W axes.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    _require_real(x, "conv3d"), _require_real(kernel, "conv3d")
    if x.ndim != 4 or kernel.ndim != 5:
        raise ShapeError(f"conv3d expects input [T,C,H,W] and kernel [K,C,kt,kh,kw], got {x.shape} and {kernel.shape}")
    stride = _triple(stride, "stride")
    padding = _triple(padding, "padding")
    if min(stride) < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if min(padding) < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    t_in, c_in, h_in, w_in = x.shape
    k_out, c_k, kt, kh, kw = kernel.shape
    if c_in != c_k:
        raise ShapeError(f"channel mismatch: input {x.shape} has {c_in} channels, kernel {kernel.shape} expects {c_k}")
    pt, ph, pw = padding
    tp, hp, wp = t_in + 2 * pt, h_in + 2 * ph, w_in + 2 * pw
    if kt > tp or kh > hp or kw > wp:
        raise ShapeError(f"kernel {(kt, kh, kw)} exceeds padded input extents {(tp, hp, wp)}")
    st, sh, sw = stride
    to, ho, wo = (tp - kt) // st + 1, (hp - kh) // sh + 1, (wp - kw) // sw + 1

    xp = np.pad(x.data, ((pt, pt), (0, 0), (ph, ph), (pw, pw))) if max(padding) else x.data
    kd = kernel.data
    val = np.zeros((to, k_out, ho, wo), dtype=REAL_DTYPE)
    for dt, dh, dw in product(range(kt), range(kh), range(kw)):
        xs = _offset_view(xp, dt, dh, dw, stride, (to, ho, wo))
        val += np.einsum("tchw,kc->tkhw", xs, kd[:, :, dt, dh, dw])
    out = Tensor._wrap(val)

    def vjp_x(g):
        gxp = np.zeros((tp, c_in, hp, wp), dtype=REAL_DTYPE)
        for dt, dh, dw in product(range(kt), range(kh), range(kw)):
            view = _offset_view(gxp, dt, dh, dw, stride, (to, ho, wo))
            view += np.einsum("tkhw,kc->tchw", g, kd[:, :, dt, dh, dw])
        return gxp[pt : pt + t_in, :, ph : ph + h_in, pw : pw + w_in]

    def vjp_k(g):
        gk = np.zeros_like(kd)
        for dt, dh, dw in product(range(kt), range(kh), range(kw)):
            xs = _offset_view(xp, dt, dh, dw, stride, (to, ho, wo))
            gk[:, :, dt, dh, dw] = np.einsum("tkhw,tchw->kc", g, xs)
        return gk

    return _finish(out, (x, vjp_x), (kernel, vjp_k))


# ---------------------------------------------------------------------------
# classification loss
# ---------------------------------------------------------------------------

def cross_entropy(logits, label: int) -> Tensor:
    """Negative log softmax probability of the given class index."""
    logits = _as_tensor(logits)
    _require_real(logits, "cross_entropy")
    if logits.ndim != 1:
        raise ShapeError(f"cross_entropy expects a rank-1 logit vector, got shape {logits.shape}")
    label = int(label)
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} classes")
    z = logits.data - logits.data.max()
    ez = np.exp(z)
    probs = ez / ez.sum()
    out = Tensor._wrap(np.asarray(np.log(ez.sum()) - z[label]))

    def vjp(g):
        grad = probs.copy()
        grad[label] -= 1.0
        return g * grad

    return _finish(out, (logits, vjp))
