"""Differentiable op catalog.

Each op computes its forward value with numpy and records a closure that
maps the output gradient to input gradients.  ``OPS`` maps op-kind names
to the functions so callers can dispatch through :func:`forward`.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import GradkitError, NonFiniteError, Tensor, as_tensor, is_strict, record

LEAKY_SLOPE = 0.01


def _check(op: str, *tensors: Tensor) -> None:
    if is_strict():
        for t in tensors:
            if not np.all(np.isfinite(t.data)):
                raise NonFiniteError(f"{op}: non-finite input of shape {t.shape}")


def _shape_error(op: str, a, b) -> GradkitError:
    return GradkitError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, a.shape, b.shape) from None


# elementwise arithmetic ---------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check("add", a, b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return record("add", (a, b), a.data + b.data,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check("sub", a, b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return record("sub", (a, b), a.data - b.data,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check("mul", a, b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return record("mul", (a, b), ad * bd,
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    _check("scale", a)
    c = float(c)
    return record("scale", (a,), a.data * c, lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    _check("matmul", a, b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return record("matmul", (a, b), out, vjp)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` fused into one node; ``x`` is (..., in), ``w`` is (in, out)."""
    _check("linear", x, w)
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise _shape_error("linear", x.shape, w.shape)
    xd, wd = x.data, w.data
    x2 = xd.reshape(-1, wd.shape[0])
    out = x2 @ wd
    if b is not None:
        if b.shape != (wd.shape[1],):
            raise _shape_error("linear", w.shape, b.shape)
        out = out + b.data
    out = out.reshape(xd.shape[:-1] + (wd.shape[1],))

    def vjp(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        return (gx, gw) if b is None else (gx, gw, g2.sum(axis=0))

    inputs = (x, w) if b is None else (x, w, b)
    return record("linear", inputs, out, vjp)


# activations --------------------------------------------------------------

def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    _check("leaky_relu", x)
    xd = x.data
    factor = np.where(xd > 0, 1.0, slope)
    return record("leaky_relu", (x,), xd * factor, lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at 0 is 0."""
    _check("relu", x)
    mask = (x.data > 0).astype(np.float64)
    return record("relu", (x,), x.data * mask, lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    _check("sigmoid", x)
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    return record("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) computed without overflow."""
    _check("log_sigmoid", x)
    xd = x.data
    out = np.minimum(xd, 0.0) - np.log1p(np.exp(-np.abs(xd)))
    # d/dx log sigmoid(x) = sigmoid(-x)
    sneg = np.exp(out - xd)
    return record("log_sigmoid", (x,), out, lambda g: (g * sneg,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check("softmax", x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", (x,), out, vjp)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check("log_softmax", x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return record("log_softmax", (x,), out,
                  lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def log(x: Tensor) -> Tensor:
    _check("log", x)
    xd = x.data
    return record("log", (x,), np.log(xd), lambda g: (g / xd,))


def exp(x: Tensor) -> Tensor:
    _check("exp", x)
    out = np.exp(x.data)
    return record("exp", (x,), out, lambda g: (g * out,))


def xlogx(x: Tensor, floor: float = 1e-12) -> Tensor:
    """x * ln(x) elementwise; entries below ``floor`` give 0 with zero gradient."""
    _check("xlogx", x)
    xd = x.data
    live = xd >= floor
    safe = np.where(live, xd, 1.0)
    out = np.where(live, xd * np.log(safe), 0.0)
    return record("xlogx", (x,), out, lambda g: (np.where(live, g * (np.log(safe) + 1.0), 0.0),))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only strictly inside the interval."""
    _check("clamp", x)
    xd = x.data
    inside = ((xd > lo) & (xd < hi)).astype(np.float64)
    return record("clamp", (x,), np.clip(xd, lo, hi), lambda g: (g * inside,))


# reductions ---------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - op name
    _check("sum", x)
    axes = _norm_axis(axis, x.data.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes)
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
    return record("sum", (x,), np.asarray(out, dtype=x.data.dtype),
                  lambda g: (np.broadcast_to(np.reshape(g, kept), shape),))


def mean(x: Tensor, axis=None) -> Tensor:
    _check("mean", x)
    axes = _norm_axis(axis, x.data.ndim)
    shape = x.shape
    count = int(np.prod([shape[a] for a in axes]))
    out = x.data.mean(axis=axes)
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
    return record("mean", (x,), np.asarray(out, dtype=x.data.dtype),
                  lambda g: (np.broadcast_to(np.reshape(g, kept) / count, shape),))


def l1(a: Tensor, b: Tensor, axis=None) -> Tensor:
    """Sum of |a - b| over ``axis`` (all axes by default); subgradient 0 at a == b."""
    _check("l1", a, b)
    if a.shape != b.shape:
        raise _shape_error("l1", a.shape, b.shape)
    diff = a.data - b.data
    sign = np.sign(diff)
    axes = _norm_axis(axis, diff.ndim)
    kept = tuple(1 if i in axes else n for i, n in enumerate(diff.shape))
    out = np.abs(diff).sum(axis=axes)

    def vjp(g):
        gs = np.reshape(g, kept) * sign
        return gs, -gs

    return record("l1", (a, b), np.asarray(out, dtype=diff.dtype), vjp)


def channel_mean(h: Tensor) -> Tensor:
    """Average over the channel axis: (C,H,W) -> (1,H,W) or (N,C,H,W) -> (N,1,H,W)."""
    _check("channel_mean", h)
    if h.data.ndim not in (3, 4):
        raise GradkitError(f"channel_mean: expected rank 3 or 4, got shape {h.shape}")
    axis = h.data.ndim - 3
    c = h.shape[axis]
    shape = h.shape
    out = h.data.mean(axis=axis, keepdims=True)
    return record("channel_mean", (h,), out,
                  lambda g: (np.broadcast_to(g / c, shape),))


# structural ---------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    _check("reshape", x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", old, shape) from None
    return record("reshape", (x,), out, lambda g: (g.reshape(old),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    _check("concat", *tensors)
    ndim = tensors[0].data.ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim or any(t.shape[i] != tensors[0].shape[i]
                                      for i in range(ndim) if i != ax):
            raise _shape_error("concat", tensors[0].shape, t.shape)
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return record("concat", tensors, out, lambda g: tuple(np.split(g, sizes, axis=ax)))


def take(x: Tensor, index, axis: int = -1) -> Tensor:
    """Select along ``axis`` with an int, slice or index array."""
    _check("take", x)
    ax = axis % x.data.ndim
    sl = [slice(None)] * x.data.ndim
    sl[ax] = index
    sl = tuple(sl)
    shape = x.shape
    out = np.array(x.data[sl])

    def vjp(g):
        gx = np.zeros(shape)
        np.add.at(gx, sl, g)
        return (gx,)

    return record("take", (x,), out, vjp)


def reparameterize(mu: Tensor, logvar: Tensor, eps: Tensor) -> Tensor:
    """z = mu + exp(logvar / 2) * eps."""
    _check("reparameterize", mu, logvar, eps)
    if not (mu.shape == logvar.shape == eps.shape):
        raise _shape_error("reparameterize", mu.shape, logvar.shape if mu.shape != logvar.shape
                           else eps.shape)
    std = np.exp(logvar.data / 2)
    ed = eps.data
    z = mu.data + std * ed
    return record("reparameterize", (mu, logvar, eps), z,
                  lambda g: (g, g * ed * std * 0.5, g * std))


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) half-pixel bilinear interpolation matrix."""
    m = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * ratio - 0.5, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        w = src - lo
        m[i, lo] += 1.0 - w
        m[i, hi] += w
    return m


def bilinear_resize(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    """Resize the last two axes with half-pixel bilinear interpolation."""
    _check("bilinear_resize", x)
    if x.data.ndim < 2:
        raise GradkitError(f"bilinear_resize: need at least 2 axes, got {x.shape}")
    h, w = x.shape[-2:]
    if (h, w) == tuple(out_hw):
        return record("bilinear_resize", (x,), x.data.copy(), lambda g: (g,))
    rh = bilinear_matrix(h, out_hw[0])
    rw = bilinear_matrix(w, out_hw[1])
    out = rh @ x.data @ rw.T
    return record("bilinear_resize", (x,), out, lambda g: (rh.T @ g @ rw,))


# convolution --------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation of (N,C,H,W) input with (O,C,k,k) kernels."""
    _check("conv2d", x, w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise _shape_error("conv2d", x.shape, w.shape)
    n, c, hgt, wid = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x.data
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise _shape_error("conv2d", x.shape, w.shape)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, Ho, Wo, C, kh, kw) contiguous columns
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, -1)
    out = cols @ wmat.T
    if b is not None:
        if b.shape != (o,):
            raise _shape_error("conv2d", w.shape, b.shape)
        out = out + b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    pshape = xp.shape

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (g2.T @ cols).reshape(w.shape)
        gcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros(pshape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding:padding + hgt, padding:padding + wid] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return record("conv2d", inputs, np.ascontiguousarray(out), vjp)


OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "matmul": matmul,
    "linear": linear,
    "conv2d": conv2d,
    "leaky_relu": leaky_relu,
    "relu": relu,
    "sigmoid": sigmoid,
    "log_sigmoid": log_sigmoid,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "log": log,
    "exp": exp,
    "clamp": clamp,
    "xlogx": xlogx,
    "sum": sum,
    "mean": mean,
    "l1": l1,
    "channel_mean": channel_mean,
    "reshape": reshape,
    "concat": concat,
    "take": take,
    "reparameterize": reparameterize,
    "bilinear_resize": bilinear_resize,
}


def forward(op_kind: str, *inputs, **attrs) -> Tensor:
    """Dispatch an op by name."""
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise GradkitError(f"unknown op {op_kind!r}") from None
    if op_kind == "concat":
        return fn([as_tensor(t) for t in inputs], **attrs)
    return fn(*(as_tensor(t) for t in inputs), **attrs)
