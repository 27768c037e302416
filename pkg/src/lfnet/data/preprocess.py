"""Update filling, normalization and time splits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

STD_FLOOR = 1e-8


def fill_updates(U: np.ndarray, revised: np.ndarray, X: np.ndarray,
                 latency: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Carry real-time values into entries that never received a revision.

    Returns the filled update tensor and a latency matrix that is zero
    wherever a (location, week) has no revised feature at all.
    """
    if U.shape != X.shape or revised.shape != X.shape:
        raise ValueError(f"shape mismatch: U {U.shape}, mask {revised.shape}, X {X.shape}")
    filled = np.where(revised, U, X)
    lat = np.zeros(X.shape[:2], dtype=np.int64) if latency is None else np.array(latency, dtype=np.int64)
    lat[~revised.any(axis=2)] = 0
    return filled, lat


@dataclass
class Normalizer:
    """Per-location, per-feature z-score fitted on the training range."""

    mean: np.ndarray  # N x F
    std: np.ndarray   # N x F
    target_mean: np.ndarray = field(default=None)  # N
    target_std: np.ndarray = field(default=None)   # N

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[:, None, :]) / self.std[:, None, :]

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        return values * self.std[:, None, :] + self.mean[:, None, :]

    def normalize_target(self, y: np.ndarray) -> np.ndarray:
        shape = (-1,) + (1,) * (y.ndim - 1)
        return (y - self.target_mean.reshape(shape)) / self.target_std.reshape(shape)

    def denormalize_target(self, y: np.ndarray) -> np.ndarray:
        shape = (-1,) + (1,) * (y.ndim - 1)
        return y * self.target_std.reshape(shape) + self.target_mean.reshape(shape)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"norm.mean": self.mean, "norm.std": self.std,
                "norm.target_mean": self.target_mean, "norm.target_std": self.target_std}

    @classmethod
    def from_arrays(cls, arrays) -> "Normalizer":
        return cls(arrays["norm.mean"], arrays["norm.std"],
                   arrays["norm.target_mean"], arrays["norm.target_std"])

    def to_json(self) -> dict:
        return {k: v.tolist() for k, v in self.arrays().items()}

    @classmethod
    def from_json(cls, d: dict) -> "Normalizer":
        return cls.from_arrays({k: np.asarray(v, dtype=float) for k, v in d.items()})


def _floored_std(x: np.ndarray, axis) -> np.ndarray:
    std = x.std(axis=axis)
    low = std < STD_FLOOR
    if np.any(low):
        warnings.warn(f"{int(low.sum())} zero-variance series; std floored at {STD_FLOOR}",
                      RuntimeWarning, stacklevel=3)
    return np.where(low, STD_FLOOR, std)


def fit_normalizer(X: np.ndarray, y: np.ndarray, train_stop: int) -> Normalizer:
    """Statistics from weeks [0, train_stop) only."""
    if train_stop < 1:
        raise ValueError("training range is empty")
    xt = X[:, :train_stop]
    yt = y[:, :train_stop]
    return Normalizer(xt.mean(axis=1), _floored_std(xt, 1), yt.mean(axis=1), _floored_std(yt, 1))


def normalize(X: np.ndarray, U: np.ndarray, y: np.ndarray, y_aux: np.ndarray,
              train_stop: int) -> tuple[dict, Normalizer]:
    """Z-score inputs and targets with training-range statistics from X and y.

    X and U share the statistics of X so both branches live on one scale; the
    auxiliary target shares the statistics of the main target.
    """
    norm = fit_normalizer(X, y, train_stop)
    return {"X": norm.normalize(X), "U": norm.normalize(U),
            "y": norm.normalize_target(y), "y_aux": norm.normalize_target(y_aux)}, norm


@dataclass(frozen=True)
class DatasetSplit:
    """Half-open week ranges. Iterative phases are set only in iterative mode."""

    num_steps: int
    train: tuple[int, int]
    validation: tuple[int, int]
    test: tuple[int, int]
    mode: str = "standard"
    deploy: Optional[tuple[int, int]] = None
    refresh: Optional[tuple[int, int]] = None

    def as_dict(self) -> dict:
        d = {"mode": self.mode, "num_steps": self.num_steps, "train": list(self.train),
             "validation": list(self.validation), "test": list(self.test)}
        if self.deploy is not None:
            d.update(deploy=list(self.deploy), refresh=list(self.refresh))
        return d


def split_dataset(T: int, mode: str = "standard") -> DatasetSplit:
    """Standard 60/20/20 split or the iterative 50/80/60-80/100 phases, scaled to T.

    In iterative mode ``train`` is the original training phase, ``refresh``
    the newly collected data used to refresh the model, and ``test`` the final
    deployment window; ``validation`` is the part of the deployment phase
    before the refresh window.
    """
    if T < 5:
        raise ValueError(f"need at least 5 timesteps to split, got {T}")
    if mode == "standard":
        tr = int(round(0.6 * T))
        va = int(round(0.2 * T))
        return DatasetSplit(T, (0, tr), (tr, tr + va), (tr + va, T))
    if mode == "iterative":
        a, b, c = (int(round(p * T / 100)) for p in (50, 60, 80))
        if not 0 < a < b < c < T:
            raise ValueError(f"T = {T} is too short for the iterative phases")
        return DatasetSplit(T, (0, a), (a, b), (c, T), "iterative", deploy=(a, c), refresh=(b, c))
    raise ValueError(f"unknown split mode {mode!r}; expected 'standard' or 'iterative'")
