"""Central finite-difference verification of the analytic gradients."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor, backward, precision

STEP = 1e-4


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck_fn(fn, arrays, seed: int = 0, step: float = STEP) -> float:
    """Max relative error between backward() and central differences of ``fn``.

    ``fn`` maps a list of Tensors to a Tensor (or list of Tensors).  The scalar
    probed is sum(out * R) with a fixed random R, so every output element
    contributes with a distinct weight.
    """
    rng = np.random.default_rng(seed + 10_000)
    with precision(np.float64):
        base = [np.array(a, dtype=np.float64) for a in arrays]
        probe = None

        def scalar(values, track):
            nonlocal probe
            leaves = [Tensor(v, requires_grad=track) for v in values]
            out = fn(leaves)
            outs = out if isinstance(out, (list, tuple)) else [out]
            if probe is None:
                probe = [rng.standard_normal(o.shape) for o in outs]
            total = None
            for o, r in zip(outs, probe):
                term = ops.sum(ops.mul(o, Tensor(r)))
                total = term if total is None else ops.add(total, term)
            return total, leaves

        loss, leaves = scalar(base, True)
        backward(loss)
        worst = 0.0
        for i, arr in enumerate(base):
            analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(arr)
            numeric = np.zeros_like(arr)
            flat = arr.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                fp = scalar(base, False)[0].item()
                flat[j] = orig - step
                fm = scalar(base, False)[0].item()
                flat[j] = orig
                numeric.reshape(-1)[j] = (fp - fm) / (2 * step)
            worst = max(worst, _rel_error(analytic, numeric))
    return worst


def _positive(a):
    return np.abs(a) + 0.5


# kind -> (default input shapes, default attrs); "transform" reshapes a domain-restricted input
PROBES = {
    "add": ([(3, 4), (4,)], {}),
    "sub": ([(3, 4), (3, 1)], {}),
    "mul": ([(2, 3), (2, 3)], {}),
    "div": ([(2, 3), (2, 3)], {"transform": {1: _positive}}),
    "neg": ([(5,)], {}),
    "exp": ([(2, 3)], {}),
    "log": ([(2, 3)], {"transform": {0: _positive}}),
    "sigmoid": ([(2, 5)], {}),
    "softplus": ([(2, 5)], {}),
    "relu": ([(3, 4)], {}),
    "leaky_relu": ([(3, 4)], {"slope": 0.01}),
    "sum": ([(2, 3, 4)], {"axis": 1}),
    "mean": ([(2, 3, 4)], {"axis": (0, 2)}),
    "reshape": ([(2, 6)], {"shape": (3, 4)}),
    "transpose": ([(2, 3, 4)], {"axes": (2, 0, 1)}),
    "index": ([(4, 5)], {"idx": (slice(1, 3), slice(None, None, 2))}),
    "concat": ([(2, 3), (2, 2)], {"axis": 1}),
    "split": ([(5, 3)], {"sizes": (2, 3), "axis": 0}),
    "stack": ([(2, 3), (2, 3)], {"axis": 1}),
    "embedding": ([(6, 4)], {"ids": np.array([[0, 5, 2], [2, 2, 1]])}),
    "matmul": ([(3, 4), (4, 2)], {}),
    "linear": ([(2, 3, 4), (4, 5), (5,)], {}),
    "softmax": ([(3, 5)], {"axis": -1}),
    "log_softmax": ([(3, 5)], {"axis": -1}),
    "attention": ([(4, 8), (4, 8), (4, 8)], {}),
    "layer_norm": ([(3, 6), (6,), (6,)], {}),
    "instance_norm": ([(2, 3, 3, 2, 2), (3,), (3,)], {}),
    "conv3d": ([(1, 2, 5, 5, 4), (3, 2, 3, 3, 3), (3,)], {"stride": 1, "padding": 1}),
    "conv_transpose3d": ([(1, 2, 2, 2, 1), (2, 3, 2, 2, 2), (3,)], {"stride": 2}),
    "upsample_trilinear": ([(1, 2, 2, 3, 2)], {"factor": 2}),
}


def gradcheck(kind: str, shapes=None, seed: int = 0, **attrs) -> float:
    """Check one operation kind on random 64-bit inputs; returns max relative error."""
    default_shapes, default_attrs = PROBES[kind]
    attrs = {**default_attrs, **attrs}
    transform = attrs.pop("transform", {})
    shapes = shapes or default_shapes
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]
    for i, f in transform.items():
        arrays[i] = f(arrays[i])
    fn = _builder(kind, attrs)
    return gradcheck_fn(fn, arrays, seed=seed)


def _builder(kind, attrs):
    if kind in ("concat", "stack"):
        return lambda ts: ops.apply(kind, *ts, **attrs)
    if kind == "index":
        idx = attrs["idx"]
        return lambda ts: ops.index(ts[0], idx)
    if kind == "embedding":
        ids = attrs["ids"]
        return lambda ts: ops.embedding(ts[0], ids)
    if kind == "attention":
        return lambda ts: ops.attention(*ts, **attrs)
    return lambda ts: ops.apply(kind, *ts, **attrs)
