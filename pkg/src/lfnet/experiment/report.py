"""Checkpoint files and run reports."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from ..autodiff import load_arrays, save_arrays
from ..autodiff.serialize import FormatError
from ..config import RunConfig
from ..data import Normalizer
from ..model import BaselineConfig, GRUBaseline, ModelConfig, PopNet
from .train import TrainReport

PARAMS_SUFFIX = ".lfnet"
SIDECAR_SUFFIX = ".json"


def save_checkpoint(path, model, cfg: RunConfig, normalizer: Normalizer,
                    params: Optional[Mapping[str, np.ndarray]] = None, extra: Optional[dict] = None) -> list[Path]:
    """Write ``<path>.lfnet`` (parameters) and ``<path>.json`` (config sidecar)."""
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    arrays = dict(params) if params is not None else {k: t.value for k, t in model.params.items()}
    save_arrays(base.with_suffix(PARAMS_SUFFIX), arrays)
    sidecar = {"kind": model.kind, "model_config": model.cfg.to_dict(), "config": cfg.to_dict(),
               "ablations": {k: getattr(cfg, k) for k in ("no_slatt", "no_tlatt", "no_latt", "no_align")},
               "seed": cfg.seed, "num_parameters": model.num_parameters,
               "normalizer": normalizer.to_json(), **(extra or {})}
    base.with_suffix(SIDECAR_SUFFIX).write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return [base.with_suffix(PARAMS_SUFFIX), base.with_suffix(SIDECAR_SUFFIX)]


def load_checkpoint(path):
    """Rebuild (model, config, normalizer, sidecar) from a checkpoint pair."""
    base = Path(path)
    if base.suffix in (PARAMS_SUFFIX, SIDECAR_SUFFIX):
        base = base.with_suffix("")
    sidecar = json.loads(base.with_suffix(SIDECAR_SUFFIX).read_text())
    arrays = load_arrays(base.with_suffix(PARAMS_SUFFIX))
    mc = dict(sidecar["model_config"])
    if sidecar["kind"] == "popnet":
        mc["dilations"] = tuple(mc["dilations"])
        model = PopNet(ModelConfig(**mc))
    elif sidecar["kind"] == "gru":
        model = GRUBaseline(BaselineConfig(**mc))
    else:
        raise FormatError(f"unknown model kind {sidecar['kind']!r}")
    missing = sorted(set(model.params) - set(arrays))
    if missing:
        hint = ""
        if any(m.startswith("align") for m in missing):
            hint = ("; the alignment maps are absent, so hidden-state initialization is unavailable: "
                    "retrain with the alignment loss or use zero initialization (--ablate no-align)")
        raise FormatError(f"checkpoint is missing parameters {missing[:5]}{hint}")
    for k, t in model.params.items():
        if arrays[k].shape != t.value.shape:
            raise FormatError(f"parameter {k!r} has shape {arrays[k].shape}, expected {t.value.shape}")
        t.value[...] = arrays[k]
    return model, RunConfig.from_dict(sidecar["config"]), Normalizer.from_json(sidecar["normalizer"]), sidecar


def _clean(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.generic):
        return _clean(v.item())
    return v


def write_json(path, payload: dict) -> Path:
    p = Path(path)
    p.write_text(json.dumps(_clean(payload), indent=1, sort_keys=True))
    return p


def write_location_csv(path, location_ids: Sequence[str], reports: Mapping[str, Sequence[TrainReport]]) -> Path:
    """One row per (model, seed, location) with the best checkpoint's metrics."""
    p = Path(path)
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "seed", "location_id", "mae", "rmse", "mape"])
        for name, runs in reports.items():
            for r in runs:
                m = r.test
                for i, lid in enumerate(location_ids):
                    w.writerow([name, r.seed, lid, repr(float(m.location_mae[i])),
                                repr(float(m.location_rmse[i])), repr(float(m.location_mape[i]))])
    return p


def write_loss_curves(path, reports: Mapping[str, Sequence[TrainReport]]) -> Path:
    p = Path(path)
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "seed", "epoch", "train_loss", "val_mse", "seconds", "grad_norm"])
        for name, runs in reports.items():
            for r in runs:
                for e, (lo, va, sec, gn) in enumerate(zip(r.train_loss, r.val_mse, r.epoch_time, r.grad_norm), 1):
                    w.writerow([name, r.seed, e, repr(lo), repr(va), f"{sec:.4f}", repr(gn)])
    return p


def seed_summary(runs: Sequence[TrainReport]) -> dict:
    maes = np.array([r.test.mae for r in runs])
    rmses = np.array([r.test.rmse for r in runs])
    mapes = np.array([r.test.mape for r in runs])
    return {"seeds": [r.seed for r in runs], "mae": maes.tolist(), "mae_mean": float(maes.mean()),
            "mae_std": float(maes.std()), "rmse_mean": float(rmses.mean()), "rmse_std": float(rmses.std()),
            "mape_mean": float(mapes.mean()), "mape_std": float(mapes.std()),
            "best_checkpoints": [r.best for r in runs]}
