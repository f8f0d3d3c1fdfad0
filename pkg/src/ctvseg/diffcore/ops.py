"""Differentiable dense operations.

Every function takes Tensors (plus static keyword attributes), computes the
forward value with numpy and records a closure mapping the output gradient to
one gradient per parent.  ``apply(kind, *inputs, **attrs)`` dispatches by name.
"""

from __future__ import annotations

import numpy as np

from .tensor import ConformanceError, NumericError, Tensor, as_tensor, make_node


def _check_finite(op, *arrays):
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericError(f"{op}: non-finite input")


def _inputs(op, *values):
    ts = tuple(as_tensor(v) for v in values)
    _check_finite(op, *(t.data for t in ts))
    return ts


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        n = max(a.ndim, b.ndim)
        sa = (1,) * (n - a.ndim) + a.shape
        sb = (1,) * (n - b.ndim) + b.shape
        bad = [i for i in range(n) if sa[i] != sb[i] and 1 not in (sa[i], sb[i])]
        raise ConformanceError(op, f"shapes {a.shape} and {b.shape} disagree on axes {bad}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _inputs("add", a, b)
    _broadcast_check("add", a, b)
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _inputs("sub", a, b)
    _broadcast_check("sub", a, b)
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _inputs("mul", a, b)
    _broadcast_check("mul", a, b)

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = _inputs("div", a, b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def back(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), back, "div")


def neg(a) -> Tensor:
    (a,) = _inputs("neg", a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    (a,) = _inputs("exp", a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    (a,) = _inputs("log", a)
    if (a.data <= 0).any():
        raise NumericError("log: non-positive input")
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a) -> Tensor:
    (a,) = _inputs("sigmoid", a)
    out = _sigmoid(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    """log(1 + e^x), evaluated without overflow."""
    (a,) = _inputs("softplus", a)
    out = np.logaddexp(0.0, a.data).astype(a.dtype, copy=False)
    return make_node(out, (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    (a,) = _inputs("leaky_relu", a)
    pos = a.data > 0
    scale = np.where(pos, 1.0, slope).astype(a.dtype)
    return make_node(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


# ---------------------------------------------------------------- reductions / shape

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    (a,) = _inputs("sum", a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return make_node(np.asarray(out), (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    (a,) = _inputs("mean", a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return make_node(np.asarray(out, dtype=a.dtype), (a,), back, "mean")


def reshape(a, shape) -> Tensor:
    (a,) = _inputs("reshape", a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ConformanceError("reshape", f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    (a,) = _inputs("transpose", a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    if sorted(axes) != list(range(a.ndim)):
        raise ConformanceError("transpose", f"axes {axes} are not a permutation of {a.ndim} axes")
    inv = np.argsort(axes)
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def index(a, idx) -> Tensor:
    (a,) = _inputs("index", a)
    out = a.data[idx]
    basic = _is_basic(idx)

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_node(np.array(out, copy=not basic) if basic else out, (a,), back, "index")


def concat(tensors, axis: int = 0) -> Tensor:
    ts = _inputs("concat", *tensors)
    if not ts:
        raise ConformanceError("concat", "nothing to concatenate")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd:
            raise ConformanceError("concat", f"rank {t.ndim} vs {nd}")
        bad = [i for i in range(nd) if i != ax and t.shape[i] != ts[0].shape[i]]
        if bad:
            raise ConformanceError("concat", f"shapes {ts[0].shape} and {t.shape} differ on axes {bad}")
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts)))

    return make_node(np.concatenate([t.data for t in ts], axis=ax), ts, back, "concat")


def split(a, sizes, axis: int = 0) -> list[Tensor]:
    a = as_tensor(a)
    ax = axis % a.ndim
    if int(np.sum(sizes)) != a.shape[ax]:
        raise ConformanceError("split", f"sizes {list(sizes)} do not sum to extent {a.shape[ax]} of axis {ax}")
    out, start = [], 0
    for n in sizes:
        sl = [slice(None)] * a.ndim
        sl[ax] = slice(start, start + n)
        out.append(index(a, tuple(sl)))
        start += n
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    expanded = []
    for t in ts:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


def embedding(table, ids) -> Tensor:
    """Gather rows of ``table`` (V, D) at integer ``ids`` (any shape)."""
    (table,) = _inputs("embedding", table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ConformanceError("embedding", f"ids outside [0, {table.shape[0]}) on axis 0")

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return make_node(table.data[ids], (table,), back, "embedding")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = _inputs("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ConformanceError("matmul", f"operands need rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ConformanceError("matmul", f"contracted axes disagree: a[-1]={a.shape[-1]} vs b[-2]={b.shape[-2]}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ConformanceError("matmul", f"batch axes {a.shape[:-2]} vs {b.shape[:-2]} do not broadcast") from None

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data @ b.data, (a, b), back, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    """x @ weight + bias with ``weight`` stored (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# ---------------------------------------------------------------- softmax / attention

def softmax(a, axis: int = -1) -> Tensor:
    (a,) = _inputs("softmax", a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (a,), back, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    (a,) = _inputs("log_softmax", a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (a,), back, "log_softmax")


def attention(q, k, v, mask=None, scale: float | None = None) -> Tensor:
    """Scaled dot-product attention softmax(q k^T * scale) v over the last two axes.

    ``mask`` is a boolean array broadcastable to (..., Tq, Tk); False entries are
    excluded.  Every query row must keep at least one key.
    """
    q, k, v = _inputs("attention", q, k, v)
    if q.shape[-1] != k.shape[-1]:
        raise ConformanceError("attention", f"query/key widths differ on last axis: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ConformanceError("attention", f"key/value token counts differ on axis -2: {k.shape[-2]} vs {v.shape[-2]}")
    if scale is None:
        scale = 1.0 / float(np.sqrt(q.shape[-1]))
    s = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise ConformanceError("attention", "mask leaves a query row with no keys")
        s = np.where(mask, s, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ v.data

    def back(g):
        gv = _unbroadcast(np.swapaxes(p, -1, -2) @ g, v.shape) if v.requires_grad else None
        gp = g @ np.swapaxes(v.data, -1, -2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
        gq = _unbroadcast(gs @ k.data, q.shape) if q.requires_grad else None
        gk = _unbroadcast(np.swapaxes(gs, -1, -2) @ q.data, k.shape) if k.requires_grad else None
        return gq, gk, gv

    node = make_node(out, (q, k, v), back, "attention")
    node.attn_weights = p
    return node


# ---------------------------------------------------------------- normalisation

def layer_norm(x, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x = as_tensor(x)
    params = [p for p in (weight, bias) if p is not None]
    ts = _inputs("layer_norm", x, *params)
    x = ts[0]
    w = ts[1] if weight is not None else None
    b = ts[-1] if bias is not None else None
    d = x.shape[-1]
    for p in (w, b):
        if p is not None and p.shape != (d,):
            raise ConformanceError("layer_norm", f"affine shape {p.shape} vs last axis {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * w.data if w is not None else xhat
    if b is not None:
        out = out + b.data

    def back(g):
        gxhat = g * w.data if w is not None else g
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        lead = tuple(range(g.ndim - 1))
        if w is not None:
            grads.append((g * xhat).sum(axis=lead))
        if b is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    return make_node(out, ts, back, "layer_norm")


def instance_norm(x, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalisation of a (B, C, *spatial) tensor."""
    params = [p for p in (weight, bias) if p is not None]
    ts = _inputs("instance_norm", x, *params)
    x = ts[0]
    w = ts[1] if weight is not None else None
    b = ts[-1] if bias is not None else None
    if x.ndim < 3:
        raise ConformanceError("instance_norm", f"need (B, C, *spatial), got {x.shape}")
    c = x.shape[1]
    for p in (w, b):
        if p is not None and p.shape != (c,):
            raise ConformanceError("instance_norm", f"affine shape {p.shape} vs channel axis 1 of extent {c}")
    axes = tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * w.data.reshape(bshape) if w is not None else xhat
    if b is not None:
        out = out + b.data.reshape(bshape)

    def back(g):
        gxhat = g * w.data.reshape(bshape) if w is not None else g
        gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        grads = [gx]
        red = (0,) + axes
        if w is not None:
            grads.append((g * xhat).sum(axis=red))
        if b is not None:
            grads.append(g.sum(axis=red))
        return tuple(grads)

    return make_node(out, ts, back, "instance_norm")


# ---------------------------------------------------------------- volumetric

def _triple(v):
    return (v, v, v) if isinstance(v, int) else tuple(v)


def conv3d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of x (B, C, H, W, S) with weight (O, C, kh, kw, ks), zero padding."""
    ts = _inputs("conv3d", x, weight, *([bias] if bias is not None else []))
    x, w = ts[0], ts[1]
    b = ts[2] if bias is not None else None
    if x.ndim != 5 or w.ndim != 5:
        raise ConformanceError("conv3d", f"need 5-D input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ConformanceError("conv3d", f"input channels (axis 1) {x.shape[1]} vs kernel in-channels (axis 1) {w.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ConformanceError("conv3d", f"bias shape {b.shape} vs out-channels {w.shape[0]}")
    st, pd, ks = _triple(stride), _triple(padding), w.shape[2:]
    B, C = x.shape[:2]
    O = w.shape[0]
    sp = x.shape[2:]
    out_sp = tuple((sp[i] + 2 * pd[i] - ks[i]) // st[i] + 1 for i in range(3))
    if min(out_sp) < 1:
        bad = [2 + i for i in range(3) if out_sp[i] < 1]
        raise ConformanceError("conv3d", f"kernel {ks} larger than padded input on axes {bad}")
    # channels-last working layout; one GEMM per kernel offset
    xl = x.data.transpose(0, 2, 3, 4, 1)
    xp = np.pad(xl, ((0, 0),) + tuple((p, p) for p in pd) + ((0, 0),)) if any(pd) else np.ascontiguousarray(xl)
    wl = np.ascontiguousarray(w.data.transpose(2, 3, 4, 1, 0))  # (kh, kw, ks, C, O)
    offsets = [(i, j, k) for i in range(ks[0]) for j in range(ks[1]) for k in range(ks[2])]
    n_out = B * out_sp[0] * out_sp[1] * out_sp[2]

    def window(i, j, k):
        return xp[:, i:i + st[0] * out_sp[0]:st[0],
                  j:j + st[1] * out_sp[1]:st[1],
                  k:k + st[2] * out_sp[2]:st[2], :]

    y = None
    for i, j, k in offsets:
        term = window(i, j, k).reshape(n_out, C) @ wl[i, j, k]
        y = term if y is None else y + term
    out = y.reshape((B,) + out_sp + (O,)).transpose(0, 4, 1, 2, 3)
    if b is not None:
        out = out + b.data.reshape(1, O, 1, 1, 1)
    out = np.ascontiguousarray(out)

    def back(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 4, 1)).reshape(n_out, O)
        gx = gw = None
        if x.requires_grad:
            dxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i, j, k in offsets:
                dxp[:, i:i + st[0] * out_sp[0]:st[0],
                    j:j + st[1] * out_sp[1]:st[1],
                    k:k + st[2] * out_sp[2]:st[2], :] += (gm @ wl[i, j, k].T).reshape((B,) + out_sp + (C,))
            gx = dxp[:, pd[0]:pd[0] + sp[0], pd[1]:pd[1] + sp[1], pd[2]:pd[2] + sp[2], :].transpose(0, 4, 1, 2, 3)
        if w.requires_grad:
            gwl = np.empty(wl.shape, dtype=w.dtype)
            for i, j, k in offsets:
                gwl[i, j, k] = window(i, j, k).reshape(n_out, C).T @ gm
            gw = gwl.transpose(4, 3, 0, 1, 2)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return tuple(grads)

    return make_node(out, ts, back, "conv3d")


def conv_transpose3d(x, weight, bias=None, stride=2) -> Tensor:
    """Transposed convolution with kernel equal to stride (non-overlapping upsampling).

    x (B, C, H, W, S), weight (C, O, k, k, k) -> (B, O, H*k, W*k, S*k).
    """
    ts = _inputs("conv_transpose3d", x, weight, *([bias] if bias is not None else []))
    x, w = ts[0], ts[1]
    b = ts[2] if bias is not None else None
    if x.ndim != 5 or w.ndim != 5:
        raise ConformanceError("conv_transpose3d", f"need 5-D input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ConformanceError("conv_transpose3d", f"input channels (axis 1) {x.shape[1]} vs kernel axis 0 {w.shape[0]}")
    ks = w.shape[2:]
    if tuple(ks) != _triple(stride):
        raise ConformanceError("conv_transpose3d", f"kernel {ks} must equal stride {_triple(stride)}")
    B, C, H, W, S = x.shape
    O = w.shape[1]
    xm = x.data.transpose(0, 2, 3, 4, 1).reshape(-1, C)
    wm = w.data.reshape(C, -1)
    y = (xm @ wm).reshape(B, H, W, S, O, *ks)
    out = y.transpose(0, 4, 1, 5, 2, 6, 3, 7).reshape(B, O, H * ks[0], W * ks[1], S * ks[2])
    if b is not None:
        out = out + b.data.reshape(1, O, 1, 1, 1)

    def back(g):
        gy = g.reshape(B, O, H, ks[0], W, ks[1], S, ks[2]).transpose(0, 2, 4, 6, 1, 3, 5, 7).reshape(-1, O * int(np.prod(ks)))
        gx = (gy @ wm.T).reshape(B, H, W, S, C).transpose(0, 4, 1, 2, 3) if x.requires_grad else None
        gw = (xm.T @ gy).reshape(w.shape) if w.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3, 4)))
        return tuple(grads)

    return make_node(out, ts, back, "conv_transpose3d")


def _interp_matrix(n: int, factor: int, dtype) -> np.ndarray:
    # half-pixel centres, edge clamped
    out = np.zeros((n * factor, n), dtype=dtype)
    src = (np.arange(n * factor) + 0.5) / factor - 0.5
    src = np.clip(src, 0, n - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = src - lo
    rows = np.arange(n * factor)
    np.add.at(out, (rows, lo), 1 - frac)
    np.add.at(out, (rows, hi), frac)
    return out


def upsample_trilinear(x, factor: int = 2) -> Tensor:
    """Trilinear upsampling of the three trailing axes of (B, C, H, W, S)."""
    (x,) = _inputs("upsample_trilinear", x)
    if x.ndim != 5:
        raise ConformanceError("upsample_trilinear", f"need (B, C, H, W, S), got {x.shape}")
    mats = [_interp_matrix(n, factor, x.dtype) for n in x.shape[2:]]
    out = x.data
    for ax, m in zip((2, 3, 4), mats):
        out = np.moveaxis(np.tensordot(m, out, axes=(1, ax)), 0, ax)

    def back(g):
        for ax, m in zip((2, 3, 4), mats):
            g = np.moveaxis(np.tensordot(m.T, g, axes=(1, ax)), 0, ax)
        return (g,)

    return make_node(np.ascontiguousarray(out), (x,), back, "upsample_trilinear")


# ---------------------------------------------------------------- dispatch

KINDS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sum": sum,
    "mean": mean,
    "reshape": reshape,
    "transpose": transpose,
    "index": index,
    "concat": concat,
    "split": split,
    "stack": stack,
    "embedding": embedding,
    "matmul": matmul,
    "linear": linear,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "attention": attention,
    "layer_norm": layer_norm,
    "instance_norm": instance_norm,
    "conv3d": conv3d,
    "conv_transpose3d": conv_transpose3d,
    "upsample_trilinear": upsample_trilinear,
}

_LIST_INPUT = {"concat", "stack"}


def apply(kind: str, *inputs, **attrs):
    """Run operation ``kind`` on ``inputs`` with static ``attrs``."""
    try:
        fn = KINDS[kind]
    except KeyError:
        raise ConformanceError(kind, f"unknown operation kind; known: {sorted(KINDS)}") from None
    if kind in _LIST_INPUT:
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)
