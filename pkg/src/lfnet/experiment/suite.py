"""Multi-model, multi-seed comparison runs."""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np

from ..config import RunConfig
from .report import seed_summary
from .train import PreparedData, TrainReport, train

VARIANTS: dict[str, dict] = {
    "PopNet": {},
    "PopNet-SLAtt": {"no_slatt": True},
    "PopNet-TLAtt": {"no_tlatt": True},
    "PopNet-LAtt": {"no_latt": True},
    "GRU": {"model": "gru"},
}


def seeds_from(base: int, count: int) -> list[int]:
    return [base + k for k in range(count)]


def compare_models(data: PreparedData, cfg: RunConfig, variants: Optional[Mapping[str, dict]] = None,
                   seeds: Sequence[int] = (42, 43, 44), log=None) -> dict[str, list[TrainReport]]:
    """Train every variant once per seed on the same prepared data."""
    variants = VARIANTS if variants is None else variants
    out: dict[str, list[TrainReport]] = {}
    for name, changes in variants.items():
        runs = []
        for s in seeds:
            _, report = train(data, cfg.replace(seed=s, **changes), log)
            report.variant = name
            runs.append(report)
            if log is not None:
                log(f"{name} seed {s}: test MAE {report.test.mae:.3f} ({report.best})")
        out[name] = runs
    return out


def summarize(results: Mapping[str, Sequence[TrainReport]]) -> dict[str, dict]:
    return {name: seed_summary(runs) for name, runs in results.items()}


def pooled_std(summaries: Mapping[str, dict], names: Sequence[str]) -> float:
    """Root mean of the per-model seed variances."""
    return float(np.sqrt(np.mean([summaries[n]["mae_std"] ** 2 for n in names])))


def ordering_check(summaries: Mapping[str, dict], better: str, worse: str) -> dict:
    """Is mean MAE of ``better`` <= that of ``worse``, strictly or within one pooled std?"""
    a, b = summaries[better]["mae_mean"], summaries[worse]["mae_mean"]
    tol = pooled_std(summaries, [better, worse])
    strict = a <= b
    return {"better": better, "worse": worse, "mae": [a, b], "pooled_std": tol, "strict": strict,
            "tie": (not strict) and (a - b) <= tol, "holds": strict or (a - b) <= tol}
