"""Building blocks shared by the forecasting networks.

All layers are plain functions over a ``params`` mapping so a model is just a
dict of named tensors plus a forward function.
"""

from __future__ import annotations

import math
from typing import Mapping, Optional

import numpy as np

from ..autodiff import NonFiniteError, ShapeError, Tensor, as_tensor, ops, parameter

Params = Mapping[str, Tensor]


def glorot(rng: np.random.Generator, shape: tuple, name: str) -> Tensor:
    fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))
    fan_out = shape[1] if len(shape) == 2 else shape[0]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-bound, bound, size=shape), name)


def zeros(shape: tuple, name: str) -> Tensor:
    return parameter(np.zeros(shape), name)


def linear(x, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    y = ops.matmul(x, W)
    return y if b is None else ops.add(y, b)


def init_mlp(rng, prefix: str, d_in: int, d_hidden: int, d_out: int) -> dict[str, Tensor]:
    return {f"{prefix}.W1": glorot(rng, (d_in, d_hidden), f"{prefix}.W1"),
            f"{prefix}.b1": zeros((d_hidden,), f"{prefix}.b1"),
            f"{prefix}.W2": glorot(rng, (d_hidden, d_out), f"{prefix}.W2"),
            f"{prefix}.b2": zeros((d_out,), f"{prefix}.b2")}


def mlp(params: Params, prefix: str, x) -> Tensor:
    """Two-layer perceptron with a LeakyReLU hidden layer."""
    h = ops.leaky_relu(linear(x, params[f"{prefix}.W1"], params[f"{prefix}.b1"]))
    return linear(h, params[f"{prefix}.W2"], params[f"{prefix}.b2"])


def latency_decay(dt) -> np.ndarray:
    """``1 / ln(1 + exp(dt))`` with the softplus evaluated stably for large dt."""
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt < 0):
        raise ValueError("latency must be nonnegative")
    softplus = np.where(dt > 30, dt + np.log1p(np.exp(-np.minimum(dt, 700))),
                        np.log1p(np.exp(np.minimum(dt, 30))))
    return 1.0 / softplus


# ------------------------------------------------------------------ GRU


def init_gru(rng, prefix: str, d_in: int, hidden: int) -> dict[str, Tensor]:
    return {f"{prefix}.W": glorot(rng, (d_in, 3 * hidden), f"{prefix}.W"),
            f"{prefix}.U": glorot(rng, (hidden, 3 * hidden), f"{prefix}.U"),
            f"{prefix}.b": zeros((3 * hidden,), f"{prefix}.b"),
            f"{prefix}.b_hn": zeros((hidden,), f"{prefix}.b_hn")}


def gru_step(params: Params, prefix: str, x, h) -> Tensor:
    """One gated recurrent update for a batch of rows.

    Gates are laid out as [reset | update | candidate] along the last axis::

        r = sigmoid(x W_r + h U_r + b_r)
        z = sigmoid(x W_z + h U_z + b_z)
        n = tanh(x W_n + b_n + r * (h U_n + b_hn))
        h' = (1 - z) * n + z * h
    """
    W, U = params[f"{prefix}.W"], params[f"{prefix}.U"]
    H = U.shape[0]
    x, h = as_tensor(x), as_tensor(h)
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"gru: input shape {x.shape} does not match weight {W.shape}")
    if h.shape[-1] != H:
        raise ShapeError(f"gru: hidden shape {h.shape} does not match recurrent weight {U.shape}")
    gx = linear(x, W, params[f"{prefix}.b"])
    gh = ops.matmul(h, U)
    r = ops.sigmoid(ops.add(gx[..., :H], gh[..., :H]))
    z = ops.sigmoid(ops.add(gx[..., H:2 * H], gh[..., H:2 * H]))
    n = ops.tanh(ops.add(gx[..., 2 * H:], ops.mul(r, ops.add(gh[..., 2 * H:], params[f"{prefix}.b_hn"]))))
    return ops.add(ops.mul(ops.sub(1.0, z), n), ops.mul(z, h))


def gru_sequence(params: Params, prefix: str, x: Tensor, h0) -> Tensor:
    """Run the cell over axis 1 of ``x`` (N x T x D); returns stacked states N x T x H."""
    xs = ops.transpose(x, (1, 0, 2))
    h = h0
    states = []
    for t in range(x.shape[1]):
        try:
            h = gru_step(params, prefix, xs[t], h)
        except NonFiniteError as err:
            raise NonFiniteError(err.op, err.value, step=t) from None
        states.append(h)
    return ops.stack(states, axis=1)


# ------------------------------------------------------------------ graph attention


def init_gat(rng, prefix: str, d_in: int, z_dim: int, out_dim: int, heads: int) -> dict[str, Tensor]:
    p = {}
    for k in range(heads):
        p[f"{prefix}.{k}.W_z"] = glorot(rng, (d_in, z_dim), f"{prefix}.{k}.W_z")
        p[f"{prefix}.{k}.W_a"] = glorot(rng, (2 * z_dim, 1), f"{prefix}.{k}.W_a")
        p[f"{prefix}.{k}.W_g"] = glorot(rng, (d_in, out_dim), f"{prefix}.{k}.W_g")
    return p


def gat(params: Params, prefix: str, heads: int, x: Tensor, dst: np.ndarray, src: np.ndarray,
        weights_out: Optional[list] = None) -> Tensor:
    """Multi-head graph attention over an edge list.

    ``x`` is N x T x F; every (dst[e], src[e]) pair is an admissible neighbour
    and every node needs at least one incoming edge (its self-loop). Per head::

        z_i = x_i W_z
        e_ij = LeakyReLU(W_a (z_i | z_j))        (split into dst and src halves)
        a_ij = softmax over j in N(i)
        g_i = LeakyReLU(mean_k sum_j a_ij^k x_j W_g^k)
    """
    N = x.shape[0]
    agg = None
    for k in range(heads):
        W_a = params[f"{prefix}.{k}.W_a"]
        zd = W_a.shape[0] // 2
        z = ops.matmul(x, params[f"{prefix}.{k}.W_z"])
        s_dst = ops.matmul(z, W_a[:zd])[..., 0]
        s_src = ops.matmul(z, W_a[zd:])[..., 0]
        e = ops.leaky_relu(ops.add(ops.take(s_dst, dst, axis=0), ops.take(s_src, src, axis=0)))
        a = ops.segment_softmax(e, dst, N)
        if weights_out is not None:
            weights_out.append(a.value)
        msg = ops.mul(ops.take(ops.matmul(x, params[f"{prefix}.{k}.W_g"]), src, axis=0),
                      ops.reshape(a, a.shape + (1,)))
        head = ops.segment_sum(msg, dst, N)
        agg = head if agg is None else ops.add(agg, head)
    return ops.leaky_relu(ops.mul(agg, 1.0 / heads))
