"""Differentiable primitives.

Every function takes tensors (or array-likes, treated as constants) and returns
a new :class:`Tensor`. When a tape is active and any input requires a gradient,
the application is recorded together with its vector-Jacobian product.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor, active_tape, as_tensor

LEAKY_SLOPE = 0.2


def _check(op: str, arr: np.ndarray) -> np.ndarray:
    # a finite sum proves every entry finite; only overflow needs the full scan
    with np.errstate(over="ignore", invalid="ignore"):
        total = np.add.reduce(arr, axis=None)
    if not np.isfinite(total) and not np.all(np.isfinite(arr)):
        raise NonFiniteError(op, arr)
    return arr


def _emit(op: str, value: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    _check(op, value)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(value, needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(op, out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a} and {b}") from None


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit("add", a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)
    av, bv = a.value, b.value
    return _emit("mul", av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.value, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """``np.matmul`` semantics, including batched and broadcast leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])
    av, bv = a.value, b.value

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bv.ndim == 2 and av.ndim > 2:
                # fold the batch axes instead of summing a stack of outer products
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(av, -1, -2) @ g
        return (None if ga is None else _unbroadcast(ga, av.shape),
                None if gb is None else _unbroadcast(gb, bv.shape))

    return _emit("matmul", av @ bv, (a, b), vjp)


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _emit("square", av * av, (a,), lambda g: (2.0 * av * g,))


# ------------------------------------------------------------- activations


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    av = a.value
    pos = av > 0
    tape = active_tape()
    if tape is not None:
        tape.kinks.append(np.signbit(av) | (av == 0))
    return _emit("leaky_relu", np.where(pos, av, slope * av), (a,),
                 lambda g: (np.where(pos, g, slope * g),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    e = np.exp(-np.abs(av))
    out = np.where(av >= 0, 1.0, e) / (1.0 + e)
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _emit("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    if np.any(av <= 0):
        raise NonFiniteError("log", av)
    return _emit("log", np.log(av), (a,), lambda g: (g / av,))


def softmax(a, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis`` with max subtraction.

    ``mask`` (boolean, broadcastable to ``a``) marks admissible entries; the
    others get weight exactly zero. Every slice must keep at least one entry.
    """
    a = as_tensor(a)
    av = a.value
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), av.shape)
        if not np.all(mask.any(axis=axis)):
            raise ShapeError("softmax over an empty set: a masked row has no admissible entry")
        shifted = np.where(mask, av, -np.inf)
    else:
        shifted = av
    m = shifted.max(axis=axis, keepdims=True)
    e = np.exp(shifted - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", out, (a,), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    av = a.value
    m = av.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(av - m).sum(axis=axis, keepdims=True))
    out = av - lse
    p = np.exp(out)
    return _emit("log_softmax", out, (a,),
                 lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def dropout(a, mask: np.ndarray, p: float) -> Tensor:
    """Inverted dropout with an explicit keep-mask (1 = keep)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    a = as_tensor(a)
    scale = np.asarray(mask, dtype=np.float64) / (1.0 - p)
    if scale.shape != a.shape:
        raise ShapeError(f"dropout: mask shape {scale.shape} does not match input {a.shape}")
    return _emit("dropout", a.value * scale, (a,), lambda g: (g * scale,))


# ---------------------------------------------------------------- reductions


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", np.asarray(out), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def causal_mean(a, axis: int = 1) -> Tensor:
    """Running mean along ``axis``: position t averages entries 0..t."""
    a = as_tensor(a)
    axis = axis % a.ndim
    n = a.shape[axis]
    counts = np.arange(1, n + 1, dtype=np.float64).reshape(
        [n if i == axis else 1 for i in range(a.ndim)])
    out = np.cumsum(a.value, axis=axis) / counts

    def vjp(g):
        gs = g / counts
        return (np.flip(np.cumsum(np.flip(gs, axis), axis=axis), axis),)

    return _emit("causal_mean", out, (a,), vjp)


# ------------------------------------------------------------------ structure


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(
                i != ax and x != y for i, (x, y) in enumerate(zip(t.shape, ref))):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]
    out = np.concatenate([t.value for t in ts], axis=ax)
    return _emit("concat", out, ts, lambda g: tuple(np.split(g, sizes, axis=ax)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError(f"stack: incompatible shapes {ts[0].shape} and {t.shape}")
    out = np.stack([t.value for t in ts], axis=axis)
    n = len(ts)
    return _emit("stack", out, ts,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _emit("reshape", out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.value, axes)
    inv = None if axes is None else np.argsort(axes)
    return _emit("transpose", out, (a,), lambda g: (np.transpose(g, inv),))


def _is_basic(key) -> bool:
    """True when ``key`` has no advanced indices, so no element is selected twice."""
    parts = key if isinstance(key, tuple) else (key,)
    return all(k is None or k is Ellipsis or isinstance(k, (slice, int, np.integer)) for k in parts)


def index(a, key) -> Tensor:
    """Basic or advanced indexing; the gradient scatters back additively."""
    a = as_tensor(a)
    shape = a.shape

    basic = _is_basic(key)

    def vjp(g):
        full = np.zeros(shape)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _emit("index", np.asarray(a.value[key]), (a,), vjp)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather slices of ``a`` along ``axis``; repeated indices accumulate."""
    a = as_tensor(a)
    indices = np.asarray(indices)
    shape = a.shape
    ax = axis % a.ndim

    def vjp(g):
        full = np.zeros(shape)
        moved = np.moveaxis(full, ax, 0)
        np.add.at(moved, indices, np.moveaxis(g, ax, 0))
        return (full,)

    return _emit("take", np.take(a.value, indices, axis=ax), (a,), vjp)


def segment_sum(a, segments, num_segments: int) -> Tensor:
    """Sum rows (axis 0) of ``a`` that share a segment id."""
    a = as_tensor(a)
    segments = np.asarray(segments)
    if segments.shape != (a.shape[0],):
        raise ShapeError(f"segment_sum: segment ids {segments.shape} vs rows {a.shape}")
    out = np.zeros((num_segments,) + a.shape[1:])
    np.add.at(out, segments, a.value)
    return _emit("segment_sum", out, (a,), lambda g: (g[segments],))


def segment_softmax(a, segments, num_segments: int) -> Tensor:
    """Softmax over rows (axis 0) grouped by segment id.

    Used for neighbourhood attention on an edge list: row ``e`` of ``a`` is the
    score of edge ``e`` and ``segments[e]`` its destination node.
    """
    a = as_tensor(a)
    segments = np.asarray(segments)
    if segments.shape != (a.shape[0],):
        raise ShapeError(f"segment_softmax: segment ids {segments.shape} vs rows {a.shape}")
    present = np.zeros(num_segments, dtype=bool)
    present[segments] = True
    if not present.all():
        raise ShapeError("segment_softmax over an empty set: a node has no incoming edge")
    av = a.value
    m = np.full((num_segments,) + av.shape[1:], -np.inf)
    np.maximum.at(m, segments, av)
    e = np.exp(av - m[segments])
    z = np.zeros_like(m)
    np.add.at(z, segments, e)
    out = e / z[segments]

    def vjp(g):
        s = np.zeros_like(m)
        np.add.at(s, segments, g * out)
        return (out * (g - s[segments]),)

    return _emit("segment_softmax", out, (a,), vjp)


# ------------------------------------------------------------- convolution


def conv1d(x, weight, bias=None, dilation: int = 1) -> Tensor:
    """Causal dilated 1-D convolution.

    ``x`` is (batch, time, in_channels), ``weight`` is
    (out_channels, in_channels, taps). The input is left-padded with
    ``(taps - 1) * dilation`` zeros so the output keeps the input length and
    position t sees only positions <= t. Tap ``l`` multiplies the input at
    ``t - (taps - 1 - l) * dilation``.
    """
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or weight.shape[1] != x.shape[2]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {weight.shape}")
    B, T, C = x.shape
    O, _, L = weight.shape
    pad = (L - 1) * dilation
    xp = np.concatenate([np.zeros((B, pad, C)), x.value], axis=1)
    wv = weight.value
    out = np.zeros((B, T, O))
    for l in range(L):
        out += xp[:, l * dilation:l * dilation + T, :] @ wv[:, :, l].T
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (O,):
            raise ShapeError(f"conv1d: bias shape {bias.shape} does not match {O} filters")
        out = out + bias.value
        inputs.append(bias)

    def vjp(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wv)
        for l in range(L):
            seg = slice(l * dilation, l * dilation + T)
            gxp[:, seg, :] += g @ wv[:, :, l]
            gw[:, :, l] = np.einsum("bto,btc->oc", g, xp[:, seg, :])
        grads = [gxp[:, pad:, :], gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 1)))
        return tuple(grads)

    return _emit("conv1d", out, inputs, vjp)
