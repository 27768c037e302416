"""Location graph built from coordinates and populations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0
DEFAULT_EDGES_PER_NODE = 2.67


@dataclass(frozen=True)
class SpatialFeatures:
    location_id: str
    population: float
    hospitals: float
    icu_beds: float
    longitude: float
    latitude: float
    income: Optional[float] = None

    def __post_init__(self):
        if not self.population > 0:
            raise ValueError(f"location {self.location_id}: population must be positive")
        _check_coords(self.latitude, self.longitude)


def _check_coords(lat, lon) -> None:
    lat, lon = np.asarray(lat, dtype=float), np.asarray(lon, dtype=float)
    if np.any(np.abs(lat) > 90) or np.any(np.abs(lon) > 180) or not (
            np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise ValueError("coordinates out of range: latitude must lie in [-90, 90] "
                         "and longitude in [-180, 180]")


def great_circle_distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Haversine distance in km between two (latitude, longitude) points in degrees."""
    _check_coords([a[0], b[0]], [a[1], b[1]])
    lat1, lon1, lat2, lon2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    h = math.sin((lat2 - lat1) / 2) ** 2 + \
        math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def pairwise_distances(lat: Sequence[float], lon: Sequence[float]) -> np.ndarray:
    _check_coords(lat, lon)
    phi = np.radians(np.asarray(lat, dtype=float))
    lam = np.radians(np.asarray(lon, dtype=float))
    dphi = phi[:, None] - phi[None, :]
    dlam = lam[:, None] - lam[None, :]
    h = np.sin(dphi / 2) ** 2 + np.cos(phi)[:, None] * np.cos(phi)[None, :] * np.sin(dlam / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))
    np.fill_diagonal(d, 0.0)
    return d


def edge_weight(p_i, p_j, d_ij, alpha: float, beta: float, gamma: float):
    """Similarity ``p_i**alpha * p_j**beta * exp(-d_ij / gamma)``; broadcasts."""
    p_i, p_j, d_ij = (np.asarray(v, dtype=float) for v in (p_i, p_j, d_ij))
    if np.any(p_i <= 0) or np.any(p_j <= 0):
        raise ValueError("populations must be positive")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if np.any(d_ij < 0):
        raise ValueError("distances must be nonnegative")
    w = p_i ** alpha * p_j ** beta * np.exp(-d_ij / gamma)
    return float(w) if w.ndim == 0 else w


@dataclass
class LocationGraph:
    """Undirected thresholded location graph with self-loops on every node."""

    ids: list[str]
    weights: np.ndarray
    adjacency: np.ndarray
    alpha: float = 0.35
    beta: float = 0.37
    gamma: float = 30.0
    omega: float = float("nan")
    neighbors: list[list[int]] = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.int8)
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        np.fill_diagonal(a, 1)
        self.adjacency = a
        self.neighbors = [list(np.flatnonzero(row)) for row in a]

    @property
    def num_nodes(self) -> int:
        return len(self.ids)

    @property
    def edge_count(self) -> int:
        """Undirected edges above the diagonal plus one self-loop per node."""
        return int(np.triu(self.adjacency, k=1).sum()) + self.num_nodes

    @property
    def edges_per_node(self) -> float:
        return (self.edge_count - self.num_nodes) / self.num_nodes

    def edge_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Directed (dst, src) pairs for every admissible attention edge, self-loops included."""
        dst, src = np.nonzero(self.adjacency)
        return dst.astype(np.int64), src.astype(np.int64)

    def degree_stats(self) -> dict:
        deg = self.adjacency.sum(axis=1) - 1
        return {"nodes": self.num_nodes, "edges": self.edge_count - self.num_nodes,
                "self_loops": self.num_nodes, "edges_per_node": self.edges_per_node,
                "degree_min": int(deg.min()), "degree_mean": float(deg.mean()),
                "degree_max": int(deg.max()), "isolated": int((deg == 0).sum())}

    def permuted(self, perm: Sequence[int]) -> "LocationGraph":
        perm = np.asarray(perm)
        return LocationGraph([self.ids[i] for i in perm], self.weights[np.ix_(perm, perm)],
                             self.adjacency[np.ix_(perm, perm)], self.alpha, self.beta,
                             self.gamma, self.omega)


def weight_matrix(features: Sequence[SpatialFeatures], alpha: float, beta: float,
                  gamma: float) -> np.ndarray:
    pop = np.array([f.population for f in features], dtype=float)
    d = pairwise_distances([f.latitude for f in features], [f.longitude for f in features])
    return edge_weight(pop[:, None], pop[None, :], d, alpha, beta, gamma)


def calibrate_omega(weights: np.ndarray, edges_per_node: float = DEFAULT_EDGES_PER_NODE) -> float:
    """Threshold giving about ``edges_per_node`` undirected non-self edges per node."""
    n = weights.shape[0]
    sym = np.maximum(weights, weights.T)[np.triu_indices(n, k=1)]
    if sym.size == 0:
        return float("inf")
    k = int(round(edges_per_node * n))
    k = min(max(k, 1), sym.size)
    return float(np.sort(sym)[::-1][k - 1])


def build_graph(features: Sequence[SpatialFeatures], alpha: float = 0.35, beta: float = 0.37,
                gamma: float = 30.0, omega: Optional[float] = None,
                edges_per_node: float = DEFAULT_EDGES_PER_NODE) -> LocationGraph:
    """Threshold the similarity matrix into an undirected graph.

    ``A_ij = 1`` iff ``max(w_ij, w_ji) >= omega``. With ``omega=None`` the
    threshold is calibrated to ``edges_per_node``.
    """
    if len(features) < 1:
        raise ValueError("need at least one location")
    ids = [f.location_id for f in features]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate location ids: {dup}")
    w = weight_matrix(features, alpha, beta, gamma)
    if omega is None:
        omega = calibrate_omega(w, edges_per_node)
    elif not omega > 0:
        raise ValueError("omega must be positive")
    adj = (np.maximum(w, w.T) >= omega).astype(np.int8)
    return LocationGraph(ids, w, adj, alpha, beta, gamma, float(omega))


def graph_from_edges(features: Sequence[SpatialFeatures], edges: Iterable[tuple[str, str]],
                     alpha: float = 0.35, beta: float = 0.37, gamma: float = 30.0) -> LocationGraph:
    """Graph from an explicit undirected edge list (duplicates ignored)."""
    ids = [f.location_id for f in features]
    pos = {i: k for k, i in enumerate(ids)}
    adj = np.zeros((len(ids), len(ids)), dtype=np.int8)
    for s, d in edges:
        if s not in pos or d not in pos:
            raise KeyError(f"edge ({s}, {d}) references an unknown location id")
        adj[pos[s], pos[d]] = adj[pos[d], pos[s]] = 1
    return LocationGraph(ids, weight_matrix(features, alpha, beta, gamma), adj, alpha, beta, gamma)


def _column(features, name: str, impute: bool) -> Optional[np.ndarray]:
    vals = [getattr(f, name) for f in features]
    if all(v is None for v in vals) and name == "income":
        return None
    if any(v is None for v in vals):
        if not impute:
            raise ValueError(f"missing spatial field {name!r} (enable imputation to fill with the median)")
        present = [v for v in vals if v is not None]
        med = float(np.median(present)) if present else 0.0
        vals = [med if v is None else v for v in vals]
    return np.asarray(vals, dtype=float)


def spatial_feature_matrix(features: Sequence[SpatialFeatures], impute: bool = False) -> np.ndarray:
    """Standardized static covariates, one row per location.

    Counts enter as log1p; every column is z-scored across locations. Income
    is included only when at least one location reports it. Missing values
    are an error unless ``impute`` fills them with the column median.
    """
    cols = [np.log1p(_column(features, "population", impute)),
            np.log1p(_column(features, "hospitals", impute)),
            np.log1p(_column(features, "icu_beds", impute)),
            _column(features, "longitude", impute),
            _column(features, "latitude", impute)]
    income = _column(features, "income", impute)
    if income is not None:
        cols.append(np.log1p(income))
    s = np.stack(cols, axis=1)
    std = s.std(axis=0)
    return (s - s.mean(axis=0)) / np.where(std < 1e-8, 1.0, std)
