"""Per-location recurrent baseline: every location is an independent sequence."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..autodiff import ShapeError, Tensor, as_tensor, ops
from .layers import gru_sequence, init_gru, init_mlp, mlp
from .popnet import ModelInputs, ModelOutput


@dataclass(frozen=True)
class BaselineConfig:
    num_features: int
    hidden: int = 128
    head_width: int = 128
    horizon: int = 1
    dropout: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)


class GRUBaseline:
    """GRU over [real-time | updated] features with a two-layer output head."""

    kind = "gru"

    def __init__(self, cfg: BaselineConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.params.update(init_gru(rng, "gru", 2 * cfg.num_features, cfg.hidden))
        self.params.update(init_mlp(rng, "head", cfg.hidden, cfg.head_width, cfg.horizon))

    @property
    def num_parameters(self) -> int:
        return int(sum(t.value.size for t in self.params.values()))

    def forward(self, inp: ModelInputs, h0=None, h0_u=None, train: bool = False,
                rng: Optional[np.random.Generator] = None, losses: Optional[bool] = None) -> ModelOutput:
        x = ops.concat([as_tensor(inp.x), as_tensor(inp.u)], axis=-1)
        if x.shape[-1] != 2 * self.cfg.num_features:
            raise ShapeError(f"expected {self.cfg.num_features} features, got {inp.x.shape}")
        N = x.shape[0]
        hs = gru_sequence(self.params, "gru", x, np.zeros((N, self.cfg.hidden)) if h0 is None else h0)
        head_in = hs
        if train and self.cfg.dropout > 0:
            keep = 1.0 - self.cfg.dropout
            head_in = ops.dropout(hs, rng.random(hs.shape) < keep, self.cfg.dropout)
        return ModelOutput(mlp(self.params, "head", head_in), state={"h": hs})

    def init_hidden_from_tie(self, prefix: ModelInputs, zero_init: bool = True):
        n = prefix.x.shape[0]
        return np.zeros((n, self.cfg.hidden)), None
