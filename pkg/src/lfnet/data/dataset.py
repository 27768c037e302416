"""In-memory dataset: real-time tensor, update stream, targets and locations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..geo import LocationGraph, SpatialFeatures


@dataclass
class UpdateStream:
    """Revised values with their latency.

    ``values`` is N x T x F, ``latency`` N x T whole weeks, ``revised`` N x T x F
    marks entries for which a revision was actually received.
    """

    values: np.ndarray
    latency: np.ndarray
    revised: np.ndarray

    def __post_init__(self):
        if np.any(self.latency < 0):
            raise ValueError("update latency must be nonnegative")


@dataclass
class Dataset:
    locations: list[SpatialFeatures]
    features: list[str]
    X: np.ndarray
    updates: UpdateStream
    targets: Optional[np.ndarray] = None
    target_feature: int = 0
    graph: Optional[LocationGraph] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n, t, f = self.X.shape
        if len(self.locations) != n or len(self.features) != f:
            raise ValueError(f"tensor shape {self.X.shape} disagrees with {len(self.locations)} "
                             f"locations and {len(self.features)} features")
        if self.updates.values.shape != self.X.shape or self.updates.latency.shape != (n, t):
            raise ValueError("update stream shape disagrees with the real-time tensor")
        if self.targets is not None and self.targets.shape != (n, t):
            raise ValueError(f"targets must be {(n, t)}, got {self.targets.shape}")

    @property
    def U(self) -> np.ndarray:
        return self.updates.values

    @property
    def latency(self) -> np.ndarray:
        return self.updates.latency

    @property
    def num_nodes(self) -> int:
        return self.X.shape[0]

    @property
    def num_steps(self) -> int:
        return self.X.shape[1]

    @property
    def num_features(self) -> int:
        return self.X.shape[2]

    @property
    def y(self) -> np.ndarray:
        """Main prediction target per node and week (raw scale)."""
        if self.targets is not None:
            return self.targets
        return self.U[:, :, self.target_feature]

    @property
    def y_aux(self) -> np.ndarray:
        """Auxiliary target: final revised value of the target feature."""
        return self.U[:, :, self.target_feature]

    @property
    def location_ids(self) -> list[str]:
        return [loc.location_id for loc in self.locations]

    def window(self, start: int, stop: int) -> "Dataset":
        """Time slice [start, stop) sharing locations and graph."""
        u = self.updates
        return Dataset(self.locations, self.features, self.X[:, start:stop],
                       UpdateStream(u.values[:, start:stop], u.latency[:, start:stop],
                                    u.revised[:, start:stop]),
                       None if self.targets is None else self.targets[:, start:stop],
                       self.target_feature, self.graph, dict(self.meta))
