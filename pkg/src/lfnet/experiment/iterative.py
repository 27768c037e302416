"""Iterative refresh protocol versus full-history retraining."""

from __future__ import annotations

import time
import tracemalloc
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..autodiff import Adam
from ..config import RunConfig
from .train import (
    PreparedData, TrainReport, Window, build_model, fit, initial_hidden, restore, train_step,
    uses_tie_init,
)


@dataclass
class StepCost:
    seconds: float      # mean wall-clock of one training epoch
    peak_bytes: int     # traced peak allocation during one training epoch

    def as_dict(self) -> dict:
        return {"seconds_per_epoch": self.seconds, "peak_bytes": self.peak_bytes}


@dataclass
class IterativeResult:
    phases: dict
    initial: TrainReport
    refreshed: TrainReport
    full_history: Optional[TrainReport]
    refresh_cost: StepCost
    full_history_cost: Optional[StepCost]
    tie_init: bool
    model: object = None  # the refreshed model (parameters as after the last refresh epoch)

    @property
    def final_test(self):
        return self.refreshed.test

    def summary(self) -> dict:
        return {"phases": self.phases, "tie_init": self.tie_init,
                "initial": self.initial.summary(), "refreshed": self.refreshed.summary(),
                "full_history": None if self.full_history is None else self.full_history.summary(),
                "refresh_cost": self.refresh_cost.as_dict(),
                "full_history_cost": None if self.full_history_cost is None
                else self.full_history_cost.as_dict()}


def measure_epoch(model, data: PreparedData, w: Window, lr: float, seed: int, repeats: int = 2) -> StepCost:
    """Time and peak traced memory of training epochs on ``w``; parameters are left unchanged."""
    saved = {k: t.value.copy() for k, t in model.params.items()}
    rng = np.random.default_rng(seed)
    opt = Adam(model.params, lr=lr)
    h0 = initial_hidden(model, data, w)
    train_step(model, data, w, opt, rng, h0)  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeats):
        train_step(model, data, w, opt, rng, h0)
    seconds = (time.perf_counter() - t0) / repeats
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    tracemalloc.reset_peak()
    base, _ = tracemalloc.get_traced_memory()
    train_step(model, data, w, opt, rng, h0)
    _, peak = tracemalloc.get_traced_memory()
    if not was_tracing:
        tracemalloc.stop()
    restore(model, saved)
    return StepCost(seconds, int(peak - base))


def iterative_protocol(data: PreparedData, cfg: RunConfig, full_history: bool = True,
                       phases: Optional[tuple[int, int, int]] = None, log=None,
                       model=None) -> IterativeResult:
    """Train on the first phase, refresh on new data, test on the final window.

    Phases (a, b, c) split weeks into initial training [0, a), deployment
    [a, b) used for validation and as the TIE prefix, refresh [b, c) and the
    final test [c, T). Every sequence that does not start at week 0 takes its
    initial hidden states from the temporal embedding of the weeks before it
    (zeros when alignment is disabled).

    A pre-trained ``model`` skips phase-1 training; it must carry trained
    alignment maps unless the configuration disables them.
    """
    T = data.num_steps
    if phases is None:
        if data.split.refresh is None:
            raise ValueError("iterative protocol needs an iterative split")
        a, b, c = data.split.train[1], data.split.refresh[0], data.split.refresh[1]
    else:
        a, b, c = phases
    if not 0 < a <= b <= c < T:
        raise ValueError(f"invalid phases {(a, b, c)} for {T} steps")
    tie_init = cfg.model == "popnet" and not cfg.no_align

    if model is None:
        model = build_model(cfg, data)
        epochs = cfg.epochs
    else:
        if tie_init and not uses_tie_init(model):
            raise ValueError("model has no trained alignment maps; refresh with TIE initialization "
                             "is impossible (use the no-align ablation for zero initialization)")
        tie_init = uses_tie_init(model)
        epochs = 0
    initial = fit(model, data, Window(0, a, 0), Window(0, b, a) if b > a else None,
                  Window(0, T, c), epochs, cfg.lr, cfg.seed, cfg.variant + "/initial", log)
    restore(model, initial.checkpoints["best_val"].params)

    refresh_w = Window(b, c, b, prefix=a)
    if c - b >= 2:
        refreshed = fit(model, data, refresh_w, None, Window(c - 1, T, c, prefix=b),
                        cfg.refresh_epochs, cfg.lr, cfg.seed, cfg.variant + "/refresh", log)
        cost = measure_epoch(model, data, refresh_w, cfg.lr, cfg.seed)
    else:
        # nothing to learn from: the deployed model is the initial one
        refreshed = initial
        cost = StepCost(0.0, 0)
    if uses_tie_init(model) != tie_init:
        raise RuntimeError("hidden-state initialization mode does not match the configuration")

    full = full_cost = None
    if full_history:
        fmodel = build_model(cfg, data)
        fw = Window(0, c, 0)
        full = fit(fmodel, data, fw, None, Window(0, T, c), cfg.full_history_epochs, cfg.lr,
                   cfg.seed, cfg.variant + "/full-history", log)
        full_cost = measure_epoch(fmodel, data, fw, cfg.lr, cfg.seed)
        if full.windows["test"] != refreshed.windows["test"]:
            raise RuntimeError("full-history and iterative runs were tested on different windows")
    return IterativeResult({"initial": [0, a], "deploy": [a, b], "refresh": [b, c], "test": [c, T]},
                           initial, refreshed, full, cost, full_cost, tie_init, model)
