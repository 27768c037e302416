"""Latency-aware spatio-temporal forecaster over a location graph.

Tensors are node-major: inputs are N x T x F and every intermediate
embedding is N x T x D. Only the two recurrent encoders step through time;
everything else is evaluated for all timesteps at once and is causal by
construction (per-timestep graph ops, left-padded convolutions, prefix means
and lower-triangular temporal attention).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..autodiff import NonFiniteError, ShapeError, Tensor, as_tensor, ops
from .layers import (
    gat, glorot, gru_sequence, init_gat, init_gru, init_mlp, latency_decay, linear, mlp, zeros,
)


@dataclass(frozen=True)
class ModelConfig:
    num_features: int
    spatial_dim: int
    sie_dim: int = 32
    gat_dim: int = 32
    heads: int = 2
    att_dim: int = 32
    hidden: int = 256
    filters: int = 16
    kernel: int = 3
    dilations: tuple = (1, 3, 5)
    head_width: int = 128
    horizon: int = 1
    dropout: float = 0.5
    slatt: bool = True
    tlatt: bool = True
    align: bool = True

    def __post_init__(self):
        for name in ("num_features", "spatial_dim", "sie_dim", "gat_dim", "heads", "att_dim",
                     "hidden", "filters", "kernel", "head_width", "horizon"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not self.dilations or min(self.dilations) < 1:
            raise ValueError("dilations must be a non-empty set of positive integers")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))

    @property
    def tie_dim(self) -> int:
        return self.filters * len(self.dilations)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d


@dataclass
class ModelInputs:
    """One window of (normalized) data plus the graph as an edge list.

    ``dst``/``src`` list every admissible (node, neighbour) pair including
    self-loops; ``latency`` is N x T in weeks.
    """

    x: np.ndarray
    u: np.ndarray
    latency: np.ndarray
    spatial: np.ndarray
    dst: np.ndarray
    src: np.ndarray

    def window(self, start: int, stop: int) -> "ModelInputs":
        return ModelInputs(self.x[:, start:stop], self.u[:, start:stop],
                           self.latency[:, start:stop], self.spatial, self.dst, self.src)

    def permuted(self, perm: np.ndarray) -> "ModelInputs":
        """Relabel nodes so that new node k is old node perm[k]."""
        inv = np.argsort(perm)
        return ModelInputs(self.x[perm], self.u[perm], self.latency[perm], self.spatial[perm],
                           inv[self.dst], inv[self.src])


@dataclass
class ModelOutput:
    pred: Tensor                       # N x T x k
    pred_aux: Optional[Tensor] = None  # N x T x k
    align: Optional[Tensor] = None     # scalar
    state: dict = field(default_factory=dict)
    attention: dict = field(default_factory=dict)


def temporal_decay(T: int) -> np.ndarray:
    """T x T matrix of f(t - i) for i <= t, zero above the diagonal."""
    age = np.arange(T)[:, None] - np.arange(T)[None, :]
    return np.where(age >= 0, latency_decay(np.maximum(age, 0)), 0.0)


def check_finite_inputs(*arrays: np.ndarray) -> None:
    """Raise NonFiniteError naming the first timestep (axis 1) holding NaN or inf."""
    for a in arrays:
        bad = ~np.isfinite(a)
        if bad.any():
            step = int(np.nonzero(bad.reshape(a.shape[0], a.shape[1], -1).any(axis=(0, 2)))[0][0])
            raise NonFiniteError("input", a, step=step)


def kl_divergence(logits_p, logits_q) -> Tensor:
    """Mean over leading axes of KL(softmax(p) || softmax(q)) along the last axis."""
    lp = ops.log_softmax(logits_p, axis=-1)
    lq = ops.log_softmax(logits_q, axis=-1)
    kl = ops.sum(ops.mul(ops.exp(lp), ops.sub(lp, lq)), axis=-1)
    return ops.mean(kl)


def alignment_loss(mapped, hidden, mapped_u, hidden_u) -> Tensor:
    """Sum of the two branch KL terms between mapped TIE vectors and hidden states."""
    return ops.add(kl_divergence(mapped, hidden), kl_divergence(mapped_u, hidden_u))


def mse(pred, target, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean squared error; ``mask`` (broadcastable to pred) selects scored entries."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    sq = ops.square(ops.sub(pred, target))
    if mask is None:
        return ops.mean(sq)
    w = np.broadcast_to(np.asarray(mask, dtype=np.float64), pred.shape)
    count = w.sum()
    if count == 0:
        raise ValueError("mse: mask selects no entries")
    return ops.mul(ops.sum(ops.mul(sq, w)), 1.0 / count)


def horizon_targets(y: np.ndarray, horizon: int, start: int, stop: int,
                    lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    """Targets for predictions made at weeks ``start..stop-1``.

    Entry [n, t, h] holds y[n, start + t + 1 + h]; the mask keeps only
    targets whose week falls in [lo, hi).
    """
    W = stop - start
    weeks = start + np.arange(W)[:, None] + 1 + np.arange(horizon)[None, :]
    mask = (weeks >= lo) & (weeks < hi) & (weeks < y.shape[1])
    Y = y[:, np.clip(weeks, 0, y.shape[1] - 1)]
    return np.where(mask[None], Y, 0.0), mask


@dataclass
class LossTerms:
    total: Tensor
    mse: Tensor
    mse_aux: Optional[Tensor]
    align: Optional[Tensor]

    def values(self) -> dict:
        return {k: (None if v is None else float(v.value))
                for k, v in (("total", self.total), ("mse", self.mse),
                             ("mse_aux", self.mse_aux), ("align", self.align))}


def total_loss(out: ModelOutput, y: np.ndarray, y_aux: Optional[np.ndarray],
               mask: Optional[np.ndarray] = None) -> LossTerms:
    """Main MSE plus auxiliary MSE plus alignment loss (terms that exist)."""
    lr = mse(out.pred, y, mask)
    total = lr
    lu = None
    if out.pred_aux is not None and y_aux is not None:
        lu = mse(out.pred_aux, y_aux, mask)
        total = ops.add(total, lu)
    if out.align is not None:
        total = ops.add(total, out.align)
    return LossTerms(total, lr, lu, out.align)


class PopNet:
    """Dual-branch graph-recurrent forecaster with latency-aware attention."""

    kind = "popnet"

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        F, S, G, A, H, C = (cfg.num_features, cfg.spatial_dim, cfg.gat_dim, cfg.att_dim,
                            cfg.hidden, cfg.tie_dim)
        p: dict[str, Tensor] = {}
        p.update(init_gat(rng, "gat", F, G, G, cfg.heads))
        p.update(init_gat(rng, "gat_u", F, G, G, cfg.heads))
        p.update(init_mlp(rng, "sie", S, cfg.sie_dim, cfg.sie_dim))
        p["slatt.W_g"] = glorot(rng, (G + cfg.sie_dim, A), "slatt.W_g")
        p["slatt.W_u"] = glorot(rng, (G + cfg.sie_dim, A), "slatt.W_u")
        p["slatt.W_a"] = glorot(rng, (A, 1), "slatt.W_a")
        p.update(init_gru(rng, "gru", 2 * G + F, H))
        p.update(init_gru(rng, "gru_u", G, H))
        for branch in ("tie", "tie_u"):
            for d in cfg.dilations:
                key = f"{branch}.conv{d}"
                p[f"{key}.W"] = glorot(rng, (cfg.filters, F, cfg.kernel), f"{key}.W")
                p[f"{key}.b"] = zeros((cfg.filters,), f"{key}.b")
            p.update(init_mlp(rng, f"{branch}.recal", F, cfg.head_width, C))
        p["tlatt.W_h1"] = glorot(rng, (H + C, A), "tlatt.W_h1")
        p["tlatt.W_h2"] = glorot(rng, (H + C, A), "tlatt.W_h2")
        p["tlatt.W_a"] = glorot(rng, (A, 1), "tlatt.W_a")
        for branch in ("align", "align_u"):
            p[f"{branch}.W"] = glorot(rng, (C, H), f"{branch}.W")
            p[f"{branch}.b"] = zeros((H,), f"{branch}.b")
        p.update(init_mlp(rng, "head", 2 * H + C, cfg.head_width, cfg.horizon))
        p.update(init_mlp(rng, "head_u", H, cfg.head_width, cfg.horizon))
        self.params = p

    @property
    def num_parameters(self) -> int:
        return int(sum(t.value.size for t in self.params.values()))

    # -------------------------------------------------------------- components

    def spatial_embedding(self, spatial) -> Tensor:
        spatial = np.asarray(spatial, dtype=np.float64)
        if spatial.ndim != 2 or spatial.shape[1] != self.cfg.spatial_dim:
            raise ShapeError(f"spatial features must be N x {self.cfg.spatial_dim}, got {spatial.shape}")
        if not np.all(np.isfinite(spatial)):
            raise ValueError("spatial features contain missing values; impute them first")
        return mlp(self.params, "sie", spatial)

    def tie(self, x, branch: str = "tie") -> Tensor:
        """Temporal information embedding for every prefix of ``x`` (N x T x F)."""
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[1] == 0:
            raise ValueError("temporal embedding needs at least one timestep")
        p = self.params
        maps = [ops.conv1d(x, p[f"{branch}.conv{d}.W"], p[f"{branch}.conv{d}.b"], dilation=d)
                for d in self.cfg.dilations]
        c = ops.concat(maps, axis=-1)
        gate = ops.sigmoid(mlp(p, f"{branch}.recal", ops.causal_mean(x, axis=1)))
        return ops.mul(c, gate)

    def slatt(self, g: Tensor, gu: Tensor, v: Tensor, latency: np.ndarray,
              dst: np.ndarray, src: np.ndarray, weights_out: Optional[list] = None) -> Tensor:
        """Cross-graph attention from real-time embeddings onto updated ones.

        e_ij = LeakyReLU(W_a (W_g (g_i | v_i) + W_u (g_j^u | v_j))) * f(dt[j, t]);
        the score is evaluated as the sum of the two projected halves.
        """
        p = self.params
        N, T, G = g.shape
        latency = np.asarray(latency)
        if latency.shape != (N, T):
            raise ShapeError(f"latency must be {(N, T)}, got {latency.shape}")
        Wg, Wu, Wa = p["slatt.W_g"], p["slatt.W_u"], p["slatt.W_a"]
        A = Wa.shape[0]

        def project(emb, W):
            spatial = ops.reshape(ops.matmul(v, W[G:]), (N, 1, A))
            return ops.matmul(ops.add(ops.matmul(emb, W[:G]), spatial), Wa)[..., 0]

        s_dst, s_src = project(g, Wg), project(gu, Wu)
        e = ops.leaky_relu(ops.add(ops.take(s_dst, dst, 0), ops.take(s_src, src, 0)))
        e = ops.mul(e, latency_decay(latency)[src])
        a = ops.segment_softmax(e, dst, N)
        if weights_out is not None:
            weights_out.append(a.value)
        msg = ops.mul(ops.take(gu, src, 0), ops.reshape(a, a.shape + (1,)))
        return ops.leaky_relu(ops.segment_sum(msg, dst, N))

    def tlatt(self, hs: Tensor, hus: Tensor, c: Tensor, cu: Tensor,
              weights_out: Optional[list] = None) -> Tensor:
        """Attention of each h_t over the updated history h^u_0..t, decayed by age."""
        p = self.params
        N, T, H = hs.shape
        if hus.shape != hs.shape:
            raise ShapeError(f"history {hus.shape} does not match hidden states {hs.shape}")
        W1, W2, Wa = p["tlatt.W_h1"], p["tlatt.W_h2"], p["tlatt.W_a"]
        q = ops.matmul(ops.concat([hs, c], axis=-1), W1)
        k_hist = ops.matmul(hus, W2[:H])
        k_now = ops.matmul(cu, W2[H:])
        s_now = ops.matmul(ops.add(q, k_now), Wa)            # N x T x 1, indexed by t
        s_hist = ops.reshape(ops.matmul(k_hist, Wa), (N, 1, T))  # indexed by i
        e = ops.mul(ops.leaky_relu(ops.add(s_now, s_hist)), temporal_decay(T))
        a = ops.softmax(e, axis=-1, mask=np.tril(np.ones((T, T), dtype=bool)))
        if weights_out is not None:
            weights_out.append(a.value)
        return ops.matmul(a, hus)

    def mapped_tie(self, c: Tensor, branch: str = "align") -> Tensor:
        return linear(c, self.params[f"{branch}.W"], self.params[f"{branch}.b"])

    # -------------------------------------------------------------- forward

    def forward(self, inp: ModelInputs, h0=None, h0_u=None, train: bool = False,
                rng: Optional[np.random.Generator] = None, losses: Optional[bool] = None) -> ModelOutput:
        """Run the network over a window.

        ``losses`` (default: same as ``train``) controls whether the auxiliary
        prediction and the alignment loss are computed; inference skips them.
        """
        cfg, p = self.cfg, self.params
        losses = train if losses is None else losses
        xv, uv = np.asarray(inp.x, dtype=np.float64), np.asarray(inp.u, dtype=np.float64)
        if xv.ndim != 3 or uv.shape != xv.shape:
            raise ShapeError(f"x and u must be matching N x T x F arrays, got {xv.shape}, {uv.shape}")
        N, T, _ = xv.shape
        if T < 1:
            raise ValueError("window must contain at least one timestep")
        check_finite_inputs(xv, uv)
        x, u = as_tensor(xv), as_tensor(uv)
        attn: dict[str, list] = {"gat": [], "gat_u": [], "slatt": [], "tlatt": []}

        g = gat(p, "gat", cfg.heads, x, inp.dst, inp.src, attn["gat"])
        gu = gat(p, "gat_u", cfg.heads, u, inp.dst, inp.src, attn["gat_u"])
        v = self.spatial_embedding(inp.spatial)
        gu_hat = self.slatt(g, gu, v, inp.latency, inp.dst, inp.src, attn["slatt"]) if cfg.slatt else gu
        g_hat = ops.concat([g, gu_hat, x], axis=-1)

        zero = np.zeros((N, cfg.hidden))
        hs = gru_sequence(p, "gru", g_hat, zero if h0 is None else h0)
        hus = gru_sequence(p, "gru_u", gu, zero if h0_u is None else h0_u)

        c, cu = self.tie(x, "tie"), self.tie(u, "tie_u")
        hu_hat = self.tlatt(hs, hus, c, cu, attn["tlatt"]) if cfg.tlatt else hus
        h_hat = ops.concat([hs, hu_hat, c], axis=-1)

        head_in, aux_in = h_hat, hus
        if train and cfg.dropout > 0:
            if rng is None:
                raise ValueError("training forward with dropout needs an rng")
            keep = 1.0 - cfg.dropout
            head_in = ops.dropout(h_hat, rng.random(h_hat.shape) < keep, cfg.dropout)
            aux_in = ops.dropout(hus, rng.random(hus.shape) < keep, cfg.dropout)
        pred = mlp(p, "head", head_in)
        pred_aux = mlp(p, "head_u", aux_in) if losses else None

        align = None
        if cfg.align and losses:
            align = alignment_loss(self.mapped_tie(c, "align"), hs, self.mapped_tie(cu, "align_u"), hus)
        state = {"g": g, "g_u": gu, "g_u_hat": gu_hat, "g_hat": g_hat, "v": v, "h": hs, "h_u": hus,
                 "c": c, "c_u": cu, "h_u_hat": hu_hat, "h_hat": h_hat}
        return ModelOutput(pred, pred_aux, align, state, attn)

    def init_hidden_from_tie(self, prefix: ModelInputs, zero_init: bool = False
                             ) -> tuple[np.ndarray, np.ndarray]:
        """Initial hidden states for a new sequence from the TIE of a data prefix.

        The TIE vectors at the last prefix step are mapped through the trained
        alignment maps. ``zero_init`` returns zeros instead.
        """
        N = prefix.x.shape[0]
        if zero_init:
            return np.zeros((N, self.cfg.hidden)), np.zeros((N, self.cfg.hidden))
        if not self.cfg.align:
            raise ValueError("alignment maps were not trained (model built with align off); "
                             "use zero initialization or retrain with the alignment loss")
        if prefix.x.shape[1] == 0:
            raise ValueError("hidden-state initialization needs a non-empty data prefix")
        c = self.tie(prefix.x, "tie")
        cu = self.tie(prefix.u, "tie_u")
        h0 = self.mapped_tie(c, "align").value[:, -1]
        h0u = self.mapped_tie(cu, "align_u").value[:, -1]
        return h0.copy(), h0u.copy()
