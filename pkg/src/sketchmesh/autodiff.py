"""Dense float32 tensors with reverse-mode autodiff on an explicit tape.

The engine is define-by-run: every primitive executed while a ``Tape`` is
active appends one entry (op kind, input node ids, output node id, and a
closure computing vector-Jacobian products). Entries are appended in
execution order, so the list is already topologically sorted and
``backward`` is a single reverse sweep that visits each node exactly once.

All tensor payloads are C-contiguous ``float32``. Elementwise binary ops
broadcast trailing-axes style, but only when one operand's shape already
equals the result shape; two-sided broadcasts such as ``(3,1) + (1,3)``
are rejected as ambiguous.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "GradientMap",
    "GradCheckReport",
    "ShapeError",
    "NonFiniteError",
    "UnknownOpError",
    "backward",
    "forward_primitive",
    "grad_check",
    "record_op",
    "active_tape",
]


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf from finite inputs."""


class UnknownOpError(KeyError):
    """``forward_primitive`` was handed an unregistered op kind."""


class Tensor:
    """A float32 ndarray plus autodiff bookkeeping.

    ``node_id`` is a handle into the currently active tape; it is assigned
    lazily the first time the tensor participates in a recorded op and is
    meaningless once that tape is discarded.
    """

    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operator sugar; every path still funnels through the primitive table
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


class _Entry:
    __slots__ = ("kind", "input_ids", "output_id", "vjp")

    def __init__(self, kind, input_ids, output_id, vjp):
        self.kind = kind
        self.input_ids = input_ids
        self.output_id = output_id
        self.vjp = vjp


class Tape:
    """Append-only op record. One tape is active at a time (single writer)."""

    def __init__(self):
        self.entries: list[_Entry] = []
        self._ids: dict[int, int] = {}
        self._refs: list[Tensor] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _ACTIVE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = None
        return False

    def node_id(self, t: Tensor) -> int:
        key = id(t)
        nid = self._ids.get(key)
        if nid is None:
            nid = len(self._refs)
            self._ids[key] = nid
            self._refs.append(t)
            t.node_id = nid
        return nid

    def owns(self, t: Tensor) -> bool:
        return id(t) in self._ids

    def __len__(self) -> int:
        return len(self.entries)


_ACTIVE: Tape | None = None


def active_tape() -> Tape | None:
    return _ACTIVE


class GradientMap:
    """Gradients from one backward sweep, keyed by tape node id."""

    def __init__(self, grads: dict[int, np.ndarray], tape: Tape):
        self._grads = grads
        self._tape = tape

    def get(self, t: Tensor) -> Tensor | None:
        if not self._tape.owns(t):
            return None
        g = self._grads.get(self._tape.node_id(t))
        return None if g is None else Tensor(g)

    def by_id(self, node_id: int) -> np.ndarray | None:
        return self._grads.get(node_id)

    def __contains__(self, t: Tensor) -> bool:
        return self.get(t) is not None


def record_op(kind, inputs, output: Tensor, vjp) -> Tensor:
    """Register a finished primitive on the active tape, if any.

    ``vjp`` maps the upstream float32 gradient of ``output`` to a tuple of
    gradients aligned with ``inputs`` (``None`` for non-differentiable
    slots). Fused primitives living outside this module (the silhouette
    rasterizer) record themselves through this hook.
    """
    t = _ACTIVE
    needs = any(i.requires_grad for i in inputs)
    output.requires_grad = needs and t is not None
    if t is None or not needs:
        return output
    in_ids = tuple(t.node_id(i) for i in inputs)
    out_id = t.node_id(output)
    t._produced.add(out_id)
    t.entries.append(_Entry(kind, in_ids, out_id, vjp))
    return output


def backward(tape: Tape, root: Tensor) -> GradientMap:
    """Reverse sweep: d(root)/d(node) for every node that fed the root.

    The root must be a scalar produced on this tape. Entries are replayed
    in reverse append order; running the same tape twice gives bit-identical
    results because accumulation order is fixed.
    """
    if not tape.owns(root):
        raise ValueError("root tensor is not on this tape")
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
    rid = tape.node_id(root)
    if rid not in tape._produced:
        raise ValueError("root was not produced by an op on this tape")
    grads: dict[int, np.ndarray] = {rid: np.ones_like(root.data)}
    for entry in reversed(tape.entries):
        g_out = grads.get(entry.output_id)
        if g_out is None:
            continue
        g_ins = entry.vjp(g_out)
        for nid, g in zip(entry.input_ids, g_ins):
            if g is None:
                continue
            g = g.astype(np.float32, copy=False)
            acc = grads.get(nid)
            grads[nid] = g.copy() if acc is None else acc + g
    return GradientMap(grads, tape)


def _check_finite(kind: str, out: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"op '{kind}' produced non-finite values")
    return out


def _finish(kind, inputs, out_data, vjp) -> Tensor:
    out = Tensor(_check_finite(kind, out_data))
    return record_op(kind, inputs, out, vjp)


# ---------------------------------------------------------------- broadcasting

def _broadcast_shapes(sa, sb):
    """Result shape for a one-sided trailing-axes broadcast.

    At least one operand must already have the full result shape; the other
    may only stretch axes of extent 1 (or be missing leading axes).
    """
    try:
        res = np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(f"shapes {sa} and {sb} do not broadcast")
    if sa != res and sb != res:
        raise ShapeError(f"ambiguous broadcast {sa} vs {sb}: neither matches {res}")
    return res


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient back down to the pre-broadcast shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _finish("add", [a, b], a.data + b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _finish("sub", [a, b], a.data - b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes(a.shape, b.shape)
    da, db, sa, sb = a.data, b.data, a.shape, b.shape
    return _finish("mul", [a, b], da * db,
                   lambda g: (_unbroadcast(g * db, sa), _unbroadcast(g * da, sb)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _finish("relu", [x], np.where(mask, x.data, np.float32(0.0)),
                   lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # stable two-branch form; never exponentiates a positive argument
    pos = d >= 0
    e = np.exp(np.where(pos, -d, d))
    y = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e)).astype(np.float32)
    return _finish("sigmoid", [x], y, lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _finish("tanh", [x], y, lambda g: (g * (1.0 - y * y),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return _finish("exp", [x], y, lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    d = x.data
    if np.any(d <= 0):
        raise ValueError("log requires strictly positive input")
    return _finish("log", [x], np.log(d), lambda g: (g / d,))


def power(x: Tensor, p: float) -> Tensor:
    p = float(p)
    d = x.data
    if p != int(p) and np.any(d < 0):
        raise ValueError(f"power({p}) of negative base")
    y = d ** np.float32(p)

    def vjp(g):
        return (g * p * d ** np.float32(p - 1.0),)

    return _finish("power", [x], y, vjp)


def clamp_min(x: Tensor, lo: float) -> Tensor:
    lo = np.float32(lo)
    mask = x.data > lo
    return _finish("clamp_min", [x], np.maximum(x.data, lo),
                   lambda g: (g * mask,))


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) without overflow, as a composite of primitives.

    The subgradient at exactly 0 is 0 rather than 1/2 (both relu branches
    choose their flat side); keep probes off that point when grad checking.
    """
    ax = add(relu(x), relu(-x))
    return add(relu(x), log(add(_as_tensor(1.0), exp(-ax))))


# ----------------------------------------------------------- shape / indexing

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {old} to {shape}")
    return _finish("reshape", [x], y, lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeError(f"axes {axes} is not a permutation for ndim {x.data.ndim}")
    inv = np.argsort(axes)
    return _finish("transpose", [x], np.ascontiguousarray(x.data.transpose(axes)),
                   lambda g: (g.transpose(inv),))


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = x.shape
    try:
        y = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {old} to {shape}")
    return _finish("broadcast", [x], np.ascontiguousarray(y),
                   lambda g: (_unbroadcast(g, old),))


def concat(parts, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of zero tensors")
    axis = int(axis)
    sizes = [p.shape[axis] for p in parts]
    offs = np.cumsum([0] + sizes)

    def vjp(g):
        sl = [slice(None)] * g.ndim
        outs = []
        for k in range(len(sizes)):
            sl[axis] = slice(int(offs[k]), int(offs[k + 1]))
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return _finish("concat", parts, np.concatenate([p.data for p in parts], axis=axis), vjp)


def tslice(x: Tensor, key) -> Tensor:
    """Basic (non-fancy) slicing; indices never repeat, so the VJP scatters."""
    y = x.data[key]
    if not isinstance(y, np.ndarray):
        y = np.asarray(y, dtype=np.float32)
    old = x.shape

    def vjp(g):
        gx = np.zeros(old, dtype=np.float32)
        gx[key] = g
        return (gx,)

    return _finish("slice", [x], np.ascontiguousarray(y), vjp)


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows along axis 0 by integer index; duplicates allowed."""
    idx = np.asarray(idx, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= x.shape[0]):
        raise IndexError("gather_rows index out of range")
    old = x.shape

    def vjp(g):
        gx = np.zeros(old, dtype=np.float32)
        np.add.at(gx, idx, g)
        return (gx,)

    return _finish("gather_rows", [x], np.ascontiguousarray(x.data[idx]), vjp)


# ----------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _norm_axis(axis, x.data.ndim)
    old = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, old).astype(np.float32),)

    return _finish("sum", [x], np.sum(x.data, axis=axis, keepdims=keepdims,
                                      dtype=np.float32), vjp)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _norm_axis(axis, x.data.ndim)
    old = x.shape
    if axis is None:
        cnt = x.data.size
    else:
        cnt = int(np.prod([old[a] for a in axis]))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / np.float32(cnt), old).astype(np.float32),)

    return _finish("mean", [x], np.mean(x.data, axis=axis, keepdims=keepdims,
                                        dtype=np.float32), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = axis % x.data.ndim
    z = x.data - np.max(x.data, axis=ax, keepdims=True)
    e = np.exp(z)
    y = (e / np.sum(e, axis=ax, keepdims=True)).astype(np.float32)

    def vjp(g):
        dot = np.sum(g * y, axis=ax, keepdims=True)
        return (y * (g - dot),)

    return _finish("softmax", [x], y, vjp)


# --------------------------------------------------------------------- linalg

def matmul(a: Tensor, b: Tensor) -> Tensor:
    da, db = a.data, b.data
    if da.ndim < 2 or db.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if da.shape[-1] != db.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {da.shape} @ {db.shape}")
    if da.shape[:-2] != db.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {da.shape} @ {db.shape}")

    def vjp(g):
        return (g @ db.swapaxes(-1, -2), da.swapaxes(-1, -2) @ g)

    return _finish("matmul", [a, b], da @ db, vjp)


# --------------------------------------------------------------- convolutions

def _conv_windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int):
    b, c, _, _ = xp.shape
    sb, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (b, c, ho, wo, kh, kw),
        (sb, sc, sh * stride, sw * stride, sh, sw), writeable=False)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with (Cout, Cin, kh, kw) kernels.

    Explicit sliding-window evaluation: the padded input is viewed as
    (B, Cin, Ho, Wo, kh, kw) windows and contracted against the kernel.
    """
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and OIHW kernel")
    if xd.shape[1] != wd.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: {xd.shape} vs {wd.shape}")
    stride, pad = int(stride), int(pad)
    if stride < 1 or pad < 0:
        raise ShapeError("conv2d needs stride >= 1 and pad >= 0")
    b, ci, h, wdt = xd.shape
    co, _, kh, kw = wd.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wdt + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d kernel larger than padded input")
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    win = _conv_windows(xp, kh, kw, stride, ho, wo)
    out = np.einsum("bchwij,ocij->bohw", win, wd, optimize=True).astype(np.float32)

    def vjp(g):
        gw = np.einsum("bohw,bchwij->ocij", g, win, optimize=True)
        gxp = np.zeros_like(xp)
        for ky in range(kh):
            for kx in range(kw):
                patch = np.einsum("bohw,oc->bchw", g, wd[:, :, ky, kx], optimize=True)
                gxp[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride] += patch
        gx = gxp[:, :, pad:pad + h, pad:pad + wdt] if pad else gxp
        return (gx, gw)

    return _finish("conv2d", [x, w], out, vjp)


def max_pool2d(x: Tensor, kernel: int = 2, stride: int | None = None) -> Tensor:
    xd = x.data
    if xd.ndim != 4:
        raise ShapeError("max_pool2d expects NCHW input")
    k = int(kernel)
    s = k if stride is None else int(stride)
    b, c, h, w = xd.shape
    ho = (h - k) // s + 1
    wo = (w - k) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeError("max_pool2d window larger than input")
    win = _conv_windows(xd, k, k, s, ho, wo).reshape(b, c, ho, wo, k * k)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gx = np.zeros_like(xd)
        ky, kx = np.unravel_index(arg, (k, k))
        bi, cj, oi, oj = np.indices(arg.shape)
        np.add.at(gx, (bi, cj, oi * s + ky, oj * s + kx), g)
        return (gx,)

    return _finish("max_pool2d", [x], np.ascontiguousarray(out), vjp)


def avg_pool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping average pooling, built from reshape + mean."""
    xd = x.data
    k = int(kernel)
    if xd.ndim == 2:
        h, w = xd.shape
        if h % k or w % k:
            raise ShapeError(f"avg_pool2d needs extents divisible by {k}, got {xd.shape}")
        r = reshape(x, (h // k, k, w // k, k))
        return tmean(r, axis=(1, 3))
    if xd.ndim == 4:
        b, c, h, w = xd.shape
        if h % k or w % k:
            raise ShapeError(f"avg_pool2d needs extents divisible by {k}, got {xd.shape}")
        r = reshape(x, (b, c, h // k, k, w // k, k))
        return tmean(r, axis=(3, 5))
    raise ShapeError("avg_pool2d expects HW or NCHW input")


# ------------------------------------------------------------------ dispatch

_PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "conv2d": conv2d,
    "broadcast": broadcast_to,
    "transpose": transpose,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": softmax,
    "sum": tsum,
    "mean": tmean,
    "max_pool2d": max_pool2d,
    "reshape": reshape,
    "concat": concat,
    "slice": tslice,
    "exp": exp,
    "log": log,
    "power": power,
    "clamp_min": clamp_min,
    "gather_rows": gather_rows,
}


def forward_primitive(kind: str, *inputs, **attrs) -> Tensor:
    """Dispatch one primitive by name. Unknown kinds raise UnknownOpError."""
    fn = _PRIMITIVES.get(kind)
    if fn is None:
        raise UnknownOpError(f"unknown op kind '{kind}'")
    return fn(*inputs, **attrs)


# ---------------------------------------------------------------- grad check

class GradCheckReport:
    """Comparison of reverse-mode gradients against central differences.

    ``rel_err`` is |ad - fd| / max(|ad|, |fd|, atol/tol), so the pass rule
    ``max_rel_err <= tol`` is the usual combined (atol, rtol) criterion:
    components whose true gradient is near zero are judged against the
    absolute floor ``atol``, which absorbs float32 finite-difference noise.
    """

    def __init__(self, ad, fd, tol, atol):
        self.ad = ad
        self.fd = fd
        self.tol = float(tol)
        self.atol = float(atol)
        err = np.abs(ad.astype(np.float64) - fd)
        denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), atol / tol)
        self.rel_err = err / denom
        self.max_rel_err = float(self.rel_err.max()) if err.size else 0.0
        self.passed = bool(self.max_rel_err <= tol)

    def __repr__(self) -> str:
        state = "pass" if self.passed else "FAIL"
        return f"GradCheckReport({state}, max_rel_err={self.max_rel_err:.3e})"


def grad_check(f, x: Tensor, h: float = 1e-3, tol: float = 1e-3,
               atol: float = 1e-4) -> GradCheckReport:
    """Check d f(x) / dx elementwise with central differences.

    ``f`` must map a Tensor to a scalar Tensor, deterministically. The
    finite-difference step is measured after float32 rounding so the
    quotient uses the step actually taken.
    """
    x = Tensor(x.data.copy(), requires_grad=True)
    with Tape() as t:
        y = f(x)
        if y.data.size != 1:
            raise ValueError("grad_check target must return a scalar")
        _check_finite("grad_check:f(x)", y.data)
        gmap = backward(t, y)
    g = gmap.get(x)
    ad = np.zeros_like(x.data) if g is None else g.data.copy()

    base = x.data.copy()
    fd = np.zeros(base.size, dtype=np.float64)
    flat = base.reshape(-1)
    probe = Tensor(base.copy())
    pflat = probe.data.reshape(-1)
    for i in range(flat.size):
        xi = flat[i]
        hi = np.float32(h)
        xp = np.float32(xi + hi)
        xm = np.float32(xi - hi)
        pflat[i] = xp
        fp = float(f(probe).data.reshape(()))
        pflat[i] = xm
        fm = float(f(probe).data.reshape(()))
        pflat[i] = xi
        fd[i] = (fp - fm) / (float(xp) - float(xm))
    return GradCheckReport(ad, fd.reshape(base.shape), tol, atol)
