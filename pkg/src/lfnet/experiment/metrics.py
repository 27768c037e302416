"""Error metrics on the original scale and per-location winner tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np


@dataclass
class MetricSet:
    rmse: float
    mae: float
    mape: float
    mape_excluded: int
    location_mae: np.ndarray
    location_mape: np.ndarray
    location_rmse: np.ndarray
    horizon_mae: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "mape": self.mape,
                "mape_excluded": self.mape_excluded, "horizon_mae": list(self.horizon_mae)}


def compute_metrics(pred: np.ndarray, y: np.ndarray, mask: Optional[np.ndarray] = None,
                    normalizer=None) -> MetricSet:
    """RMSE, MAE and MAPE over the selected entries.

    ``pred`` and ``y`` are N x ... arrays (typically N x T x k). With a
    ``normalizer`` both are mapped back to the original scale first. Entries
    with y = 0 are left out of MAPE and counted in ``mape_excluded``. MAPE is
    a fraction (0.1 means 10%).
    """
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target {y.shape}")
    if normalizer is not None:
        pred = normalizer.denormalize_target(pred)
        y = normalizer.denormalize_target(y)
    w = np.ones(y.shape, bool) if mask is None else np.broadcast_to(np.asarray(mask, bool), y.shape)
    if not w.any():
        raise ValueError("no entries selected for evaluation")
    N = y.shape[0]
    err = pred - y
    sq, ab = err ** 2, np.abs(err)
    nz = w & (y != 0)
    rel = np.where(nz, ab / np.where(y == 0, 1.0, np.abs(y)), 0.0)

    def per_loc(v, m):
        cnt = m.reshape(N, -1).sum(axis=1)
        tot = np.where(m, v, 0.0).reshape(N, -1).sum(axis=1)
        return np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)

    horizon_mae = []
    if y.ndim == 3:
        for h in range(y.shape[2]):
            wh = w[:, :, h]
            horizon_mae.append(float(ab[:, :, h][wh].mean()) if wh.any() else float("nan"))
    return MetricSet(
        rmse=float(np.sqrt(sq[w].mean())),
        mae=float(ab[w].mean()),
        mape=float(rel[nz].mean()) if nz.any() else float("nan"),
        mape_excluded=int((w & (y == 0)).sum()),
        location_mae=per_loc(ab, w),
        location_mape=per_loc(rel, nz),
        location_rmse=np.sqrt(per_loc(sq, w)),
        horizon_mae=horizon_mae,
    )


@dataclass
class WinnerTable:
    models: list
    winners: list            # model name per location
    wins: dict
    win_pct: dict
    mean_delta_mape: dict    # mean over won locations of (runner-up MAPE - winner MAPE)

    def rows(self) -> list[dict]:
        return [{"model": m, "wins": self.wins[m], "win_pct": self.win_pct[m],
                 "mean_delta_mape": self.mean_delta_mape[m]} for m in self.models]


def per_location_report(metrics: Mapping[str, MetricSet]) -> WinnerTable:
    """Count the locations where each model has the lowest MAE.

    Ties on MAE go to the lower RMSE and then to the lexicographically
    smaller model name.
    """
    if len(metrics) < 2:
        raise ValueError("a winner table needs at least two models")
    names = sorted(metrics)
    n = {len(metrics[m].location_mae) for m in names}
    if len(n) != 1:
        raise ValueError("models were evaluated on different location sets")
    N = n.pop()
    winners, deltas = [], {m: [] for m in names}
    for i in range(N):
        order = sorted(names, key=lambda m: (metrics[m].location_mae[i], metrics[m].location_rmse[i], m))
        best, runner = order[0], order[1]
        winners.append(best)
        deltas[best].append(metrics[runner].location_mape[i] - metrics[best].location_mape[i])
    wins = {m: winners.count(m) for m in names}
    return WinnerTable(
        names, winners, wins, {m: 100.0 * wins[m] / N for m in names},
        {m: (float(np.nanmean(deltas[m])) if deltas[m] and not np.all(np.isnan(deltas[m]))
             else float("nan")) for m in names})
