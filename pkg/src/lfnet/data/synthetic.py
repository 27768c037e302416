"""Synthetic revision-stream generator.

Pipeline per dataset:

1. base weekly counts per location and feature: seasonal sinusoid (52-week
   period), linear trend, log-normal level/jitter and a log-scale activity
   term that diffuses across graph edges with a one-week lag, drawn from
   random streams derived from (seed, location index);
2. each location aggregates its own base series with 1-5 random graph
   neighbours;
3. every week is replaced by the mean of 1-3 contiguous trailing weeks
   (length preserved);
4. real-time values add Gaussian noise whose scale is ``noise_sigma`` times the
   per-series standard deviation; targets are the noise-free series;
5. revisions repeat steps 2-4 with fresh noise and are released in batches
   every ``latency_interval`` weeks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from ..geo import SpatialFeatures, build_graph
from .dataset import Dataset, UpdateStream

# Average weekly cases per ICD-10 category, used as relative feature levels.
CATEGORY_MEANS = [314.9, 966.1, 344.8, 1508.8, 1470.1, 744.2, 385.8, 192.2, 1717.2, 1774.7,
                  653.1, 496.9, 2226.7, 897.0, 152.6, 45.9, 80.2, 2480.2, 683.3, 12.4, 2653.2]
CATEGORY_CODES = ["A00-B99", "B00-D49", "D50-D89", "E00-E89", "F01-F99", "G00-G99", "H00-H59",
                  "H60-H95", "I00-I99", "J00-J99", "K00-K95", "L00-L99", "M00-M99", "N00-N99",
                  "O00-O99", "P00-P96", "Q00-Q99", "R00-R99", "S00-T88", "V00-Y99", "Z00-Z99"]


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int = 42
    num_locations: int = 1015
    num_steps: int = 63
    num_features: int = 22
    latency_interval: int = 5
    noise_sigma: float = 1.0
    min_neighbors: int = 1
    max_neighbors: int = 5
    min_window: int = 1
    max_window: int = 3
    mean_target: float = 1098.7
    target_feature: int = 0
    season_amplitude: float = 0.35
    trend_scale: float = 0.2
    jitter_sigma: float = 0.03
    persistence: float = 0.3
    spread: float = 0.6
    shock_sigma: float = 0.12
    shared_shock: float = 0.7
    burn_in: int = 26
    stagger_releases: bool = True
    lat_range: tuple = (33.0, 43.0)
    lon_range: tuple = (-98.0, -82.0)


def _feature_names(F: int) -> list[str]:
    names = []
    for f in range(F):
        code = CATEGORY_CODES[f % len(CATEGORY_CODES)]
        names.append(code if f < len(CATEGORY_CODES) else f"{code}#{f // len(CATEGORY_CODES)}")
    return names


def _location_stream(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, i]))


def _locations(cfg: SyntheticConfig) -> list[SpatialFeatures]:
    out = []
    for i in range(cfg.num_locations):
        rng = _location_stream(cfg.seed, i)
        pop = float(np.round(rng.lognormal(10.3, 1.1))) + 100.0
        out.append(SpatialFeatures(
            f"L{i:04d}", pop,
            float(rng.poisson(1 + pop / 60000)), float(rng.poisson(2 + pop / 8000)),
            float(rng.uniform(*cfg.lon_range)), float(rng.uniform(*cfg.lat_range)),
            float(np.round(rng.lognormal(10.9, 0.25), 2))))
    return out


def _diffusion(cfg: SyntheticConfig, graph) -> np.ndarray:
    """Log-scale activity that spreads along graph edges with a one-week lag.

    z[t+1] = persistence * z[t] + spread * (neighbour mean of z[t]) + shock
    """
    N, T, F = cfg.num_locations, cfg.num_steps, cfg.num_features
    if cfg.persistence < 0 or cfg.spread < 0 or cfg.persistence + cfg.spread >= 1:
        raise ValueError("need persistence, spread >= 0 with persistence + spread < 1")
    A = graph.adjacency.astype(np.float64)
    np.fill_diagonal(A, 0.0)
    deg = A.sum(axis=1, keepdims=True)
    A = np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)
    steps = T + cfg.burn_in
    if not 0.0 <= cfg.shared_shock <= 1.0:
        raise ValueError("shared_shock must lie in [0, 1]")
    # each location's shock mixes one component common to all features with
    # feature-specific ones; shared_shock is the common share of the variance
    draws = np.stack([_location_stream(cfg.seed, 70_000_000 + i).standard_normal((steps, F + 1))
                      for i in range(N)], axis=1)
    shocks = cfg.shock_sigma * (np.sqrt(cfg.shared_shock) * draws[:, :, :1]
                                + np.sqrt(1.0 - cfg.shared_shock) * draws[:, :, 1:])
    z = np.zeros((steps, N, F))
    for t in range(1, steps):
        z[t] = cfg.persistence * z[t - 1] + cfg.spread * (A @ z[t - 1]) + shocks[t]
    return np.transpose(z[cfg.burn_in:], (1, 0, 2))


def _base_series(cfg: SyntheticConfig, locations, graph) -> np.ndarray:
    N, T, F = cfg.num_locations, cfg.num_steps, cfg.num_features
    rel = np.array([CATEGORY_MEANS[f % len(CATEGORY_MEANS)] for f in range(F)])
    t = np.arange(T)
    base = np.empty((N, T, F))
    lon0 = np.mean(cfg.lon_range)
    for i, loc in enumerate(locations):
        rng = _location_stream(cfg.seed, 10_000_000 + i)
        level = rel * (loc.population / 3e4) ** 0.5 * rng.lognormal(0.0, 0.3, size=F)
        # seasonal phase drifts with longitude so nearby locations peak together
        phase = (loc.longitude - lon0) * 0.8 + rng.normal(0.0, 2.0, size=F)
        amp = cfg.season_amplitude * rng.uniform(0.5, 1.5, size=F)
        season = 1.0 + amp * np.sin(2 * np.pi * (t[:, None] + phase) / 52.0)
        trend = 1.0 + cfg.trend_scale * rng.uniform(-1, 1, size=F) * t[:, None] / max(T - 1, 1)
        jitter = rng.lognormal(0.0, cfg.jitter_sigma, size=(T, F))
        base[i] = level * season * trend * jitter
    return base * np.exp(_diffusion(cfg, graph))


def _aggregation_sets(cfg: SyntheticConfig, graph) -> list[np.ndarray]:
    sets = []
    for i in range(cfg.num_locations):
        rng = _location_stream(cfg.seed, 20_000_000 + i)
        nb = [j for j in graph.neighbors[i] if j != i]
        k = int(rng.integers(cfg.min_neighbors, cfg.max_neighbors + 1))
        chosen = rng.choice(nb, size=min(k, len(nb)), replace=False) if nb else np.array([], int)
        sets.append(np.concatenate([[i], np.sort(chosen)]).astype(int))
    return sets


def _resample(series: np.ndarray, windows: np.ndarray) -> np.ndarray:
    """Trailing mean over ``windows[i, t]`` weeks (clipped at the start)."""
    N, T, _ = series.shape
    c = np.concatenate([np.zeros((N, 1, series.shape[2])), np.cumsum(series, axis=1)], axis=1)
    t = np.arange(T)[None, :]
    start = np.maximum(t - windows + 1, 0)
    idx_n = np.arange(N)[:, None]
    width = (t + 1 - start)[:, :, None]
    return (c[idx_n, t + 1] - c[idx_n, start]) / width


def _noisy(clean: np.ndarray, scale: np.ndarray, sigma: float, rngs) -> np.ndarray:
    out = np.empty_like(clean)
    for i, rng in enumerate(rngs):
        out[i] = clean[i] + sigma * scale[i] * rng.standard_normal(clean.shape[1:])
    return np.maximum(out, 0.0)


def release_latency(cfg: SyntheticConfig) -> np.ndarray:
    """Weeks between each target week and the batch release that revises it.

    Releases happen every ``latency_interval`` weeks; with staggering each
    location's schedule has its own phase. Entries whose release would fall
    after the last week are reported as -1 (never received).
    """
    N, T, I = cfg.num_locations, cfg.num_steps, cfg.latency_interval
    if I < 1:
        raise ValueError("latency_interval must be >= 1")
    lat = np.empty((N, T), dtype=np.int64)
    t = np.arange(T)
    for i in range(N):
        offset = int(_location_stream(cfg.seed, 30_000_000 + i).integers(0, I)) if cfg.stagger_releases else 0
        # release weeks r satisfy (r - offset) % I == I - 1
        received = t + ((I - 1 + offset - t) % I)
        lat[i] = np.where(received < T, received - t, -1)
    return lat


def generate_synthetic(cfg: Optional[SyntheticConfig] = None, **overrides) -> Dataset:
    """Build a complete synthetic dataset; a pure function of the config."""
    cfg = cfg or SyntheticConfig()
    if overrides:
        cfg = SyntheticConfig(**{**asdict(cfg), **overrides})
    if cfg.num_locations < 10 or cfg.num_steps < 20:
        raise ValueError("synthetic data needs at least 10 locations and 20 timesteps")
    N, T, F = cfg.num_locations, cfg.num_steps, cfg.num_features

    locations = _locations(cfg)
    graph = build_graph(locations)
    base = _base_series(cfg, locations, graph)
    sets = _aggregation_sets(cfg, graph)
    agg = np.stack([base[s].sum(axis=0) for s in sets])
    windows = np.stack([_location_stream(cfg.seed, 40_000_000 + i)
                        .integers(cfg.min_window, cfg.max_window + 1, size=T) for i in range(N)])
    clean = _resample(agg, windows)
    scale_factor = cfg.mean_target / clean[:, :, cfg.target_feature].mean()
    clean *= scale_factor
    series_std = clean.std(axis=1, keepdims=True)

    X = _noisy(clean, series_std, cfg.noise_sigma,
               [_location_stream(cfg.seed, 50_000_000 + i) for i in range(N)])
    U_raw = _noisy(clean, series_std, cfg.noise_sigma,
                   [_location_stream(cfg.seed, 60_000_000 + i) for i in range(N)])
    lat = release_latency(cfg)
    received = lat >= 0
    revised = np.broadcast_to(received[:, :, None], X.shape).copy()
    U = np.where(revised, U_raw, X)
    latency = np.where(received, lat, 0)

    meta = {"generator": "synthetic", "config": {k: list(v) if isinstance(v, tuple) else v
                                                  for k, v in asdict(cfg).items()},
            "omega": graph.omega, "edges_per_node": graph.edges_per_node}
    return Dataset(locations, _feature_names(F), X, UpdateStream(U, latency, revised),
                   clean[:, :, cfg.target_feature].copy(), cfg.target_feature, graph, meta)
