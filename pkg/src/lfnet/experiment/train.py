"""Training loop with the three-checkpoint rule, evaluation and model building."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..autodiff import Adam, NonFiniteError, Tape, backward
from ..config import RunConfig
from ..data import Dataset, DatasetSplit, Normalizer, normalize
from ..geo import build_graph, spatial_feature_matrix
from ..model import (
    BaselineConfig, GRUBaseline, ModelConfig, ModelInputs, PopNet, horizon_targets, total_loss,
)
from .metrics import MetricSet, compute_metrics

CHECKPOINT_TAGS = ("best_train", "best_val", "last")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, last_good: Optional["Checkpoint"], cause: str = ""):
        where = "none" if last_good is None else f"{last_good.tag} (epoch {last_good.epoch})"
        super().__init__(f"training diverged at epoch {epoch}: {cause}; last good checkpoint: {where}")
        self.epoch = epoch
        self.last_good = last_good


@dataclass
class PreparedData:
    dataset: Dataset
    split: DatasetSplit
    inputs: ModelInputs
    y: np.ndarray
    y_aux: np.ndarray
    normalizer: Normalizer

    @property
    def num_steps(self) -> int:
        return self.inputs.x.shape[1]


def prepare(ds: Dataset, split: DatasetSplit, cfg: Optional[RunConfig] = None,
            normalizer: Optional[Normalizer] = None) -> PreparedData:
    """Normalize with training-range statistics (or a saved ``normalizer``) and assemble inputs."""
    cfg = cfg or RunConfig()
    graph = ds.graph
    if graph is None:
        graph = build_graph(ds.locations, cfg.alpha, cfg.beta, cfg.gamma, cfg.omega)
    if normalizer is None:
        arrays, norm = normalize(ds.X, ds.U, ds.y, ds.y_aux, split.train[1])
    else:
        if normalizer.mean.shape != (ds.num_nodes, ds.num_features):
            raise ValueError(f"normalizer covers {normalizer.mean.shape} series, dataset has "
                             f"{(ds.num_nodes, ds.num_features)}")
        norm = normalizer
        arrays = {"X": norm.normalize(ds.X), "U": norm.normalize(ds.U),
                  "y": norm.normalize_target(ds.y), "y_aux": norm.normalize_target(ds.y_aux)}
    dst, src = graph.edge_index()
    spatial = spatial_feature_matrix(ds.locations, impute=cfg.impute_spatial)
    inputs = ModelInputs(arrays["X"], arrays["U"], ds.latency, spatial, dst, src)
    return PreparedData(ds, split, inputs, arrays["y"], arrays["y_aux"], norm)


def build_model(cfg: RunConfig, data: PreparedData, seed: Optional[int] = None):
    seed = cfg.seed if seed is None else seed
    F = data.inputs.x.shape[2]
    if cfg.model == "gru":
        return GRUBaseline(BaselineConfig(F, cfg.gru_hidden, cfg.head_width, cfg.horizon, cfg.dropout), seed)
    mc = ModelConfig(F, data.inputs.spatial.shape[1], sie_dim=cfg.sie_dim, gat_dim=cfg.gat_dim,
                     heads=cfg.heads, att_dim=cfg.att_dim, hidden=cfg.hidden, filters=cfg.filters,
                     kernel=cfg.kernel, dilations=cfg.dilations, head_width=cfg.head_width,
                     horizon=cfg.horizon, dropout=cfg.dropout, slatt=cfg.use_slatt,
                     tlatt=cfg.use_tlatt, align=not cfg.no_align)
    return PopNet(mc, seed)


def uses_tie_init(model) -> bool:
    return isinstance(model, PopNet) and model.cfg.align


@dataclass(frozen=True)
class Window:
    """Run inputs over [start, stop) and score targets whose week lies in [lo, stop).

    When ``prefix`` is set and ``start > prefix``, the initial hidden states
    come from the temporal embedding of weeks [prefix, start) (zeros for
    models without trained alignment maps).
    """

    start: int
    stop: int
    lo: int
    prefix: Optional[int] = None


def initial_hidden(model, data: PreparedData, w: Window):
    if w.prefix is None or w.start <= w.prefix:
        return None, None
    return model.init_hidden_from_tie(data.inputs.window(w.prefix, w.start),
                                      zero_init=not uses_tie_init(model))


def predict_window(model, data: PreparedData, w: Window) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inference predictions, targets and mask (all N x W x k, normalized units)."""
    h0, h0u = initial_hidden(model, data, w)
    out = model.forward(data.inputs.window(w.start, w.stop), h0, h0u, train=False)
    k = out.pred.shape[2]
    Y, M = horizon_targets(data.y, k, w.start, w.stop, w.lo, w.stop)
    return out.pred.value, Y, np.broadcast_to(M[None], Y.shape)


def evaluate(model, data: PreparedData, w: Window) -> MetricSet:
    pred, Y, M = predict_window(model, data, w)
    return compute_metrics(pred, Y, M, data.normalizer)


def validation_mse(model, data: PreparedData, w: Window) -> float:
    pred, Y, M = predict_window(model, data, w)
    if not M.any():
        return float("nan")
    return float(((pred - Y) ** 2)[M].mean())


@dataclass
class Checkpoint:
    tag: str
    epoch: int
    params: dict
    train_loss: float
    val_mse: float
    test: Optional[MetricSet] = None

    def summary(self) -> dict:
        return {"tag": self.tag, "epoch": self.epoch, "train_loss": self.train_loss,
                "val_mse": self.val_mse, "test": None if self.test is None else self.test.summary()}


@dataclass
class TrainReport:
    variant: str
    seed: int
    num_parameters: int
    train_loss: list = field(default_factory=list)
    loss_terms: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    epoch_time: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    best: str = ""
    windows: dict = field(default_factory=dict)

    @property
    def test(self) -> MetricSet:
        return self.checkpoints[self.best].test

    def summary(self) -> dict:
        return {"variant": self.variant, "seed": self.seed, "num_parameters": self.num_parameters,
                "best_checkpoint": self.best, "test": self.test.summary(),
                "checkpoints": {k: c.summary() for k, c in self.checkpoints.items()},
                "train_loss": self.train_loss, "val_mse": self.val_mse,
                "epoch_time": self.epoch_time, "windows": self.windows}


def snapshot(model) -> dict:
    return {k: t.value.copy() for k, t in model.params.items()}


def restore(model, params: dict) -> None:
    for k, t in model.params.items():
        t.value[...] = params[k]


def train_step(model, data: PreparedData, w: Window, opt: Adam, rng: np.random.Generator,
               h0=None) -> tuple[dict, float]:
    """One full-sequence gradient step over window ``w``; returns loss terms and grad norm."""
    k = model.cfg.horizon
    Y, M = horizon_targets(data.y, k, w.start, w.stop, w.lo, w.stop)
    Ya, _ = horizon_targets(data.y_aux, k, w.start, w.stop, w.lo, w.stop)
    h0, h0u = h0 if h0 is not None else (None, None)
    with Tape() as tape:
        out = model.forward(data.inputs.window(w.start, w.stop), h0, h0u, train=True, rng=rng)
        terms = total_loss(out, Y, Ya, M[None])
    names = list(model.params)
    grads = backward(tape, terms.total, [model.params[n] for n in names])
    grads = {n: g for n, g in zip(names, grads.values())}
    gnorm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if not np.isfinite(gnorm):
        raise NonFiniteError("backward", np.array(gnorm))
    opt.step(grads)
    return terms.values(), gnorm


def fit(model, data: PreparedData, train_w: Window, val_w: Optional[Window], test_w: Window,
        epochs: int, lr: float, seed: int, variant: str = "", log=None) -> TrainReport:
    """Adam training with three retained checkpoints.

    Checkpoints: lowest training loss, lowest validation MSE (the training-loss
    one when there is no validation window) and the last epoch. Each is tested
    on ``test_w`` and the best test MAE is reported.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    opt = Adam(model.params, lr=lr)
    report = TrainReport(variant, seed, model.num_parameters)
    report.windows = {"train": [train_w.lo, train_w.stop], "test": [test_w.lo, test_w.stop],
                      "validation": None if val_w is None else [val_w.lo, val_w.stop]}
    h0 = initial_hidden(model, data, train_w)

    def val_of(epoch: int, last_good) -> float:
        if val_w is None:
            return float("nan")
        try:
            return validation_mse(model, data, val_w)
        except NonFiniteError as err:
            raise TrainingDiverged(epoch, last_good, f"validation: {err}") from err

    init_val = val_of(0, None)
    init = Checkpoint("init", 0, snapshot(model), float("inf"), init_val)
    best_train = Checkpoint("best_train", 0, init.params, float("inf"), init_val)
    best_val = Checkpoint("best_val", 0, init.params, float("inf"), init_val)
    last = Checkpoint("last", 0, init.params, float("inf"), init_val)
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        try:
            terms, gnorm = train_step(model, data, train_w, opt, rng, h0)
        except NonFiniteError as err:
            raise TrainingDiverged(epoch, best_train if epoch > 1 else None, str(err)) from err
        if not np.isfinite(terms["total"]):
            raise TrainingDiverged(epoch, best_train, "loss is not finite")
        v = val_of(epoch, best_train if epoch > 1 else None)
        report.epoch_time.append(time.perf_counter() - t0)
        report.train_loss.append(terms["total"])
        report.loss_terms.append(terms)
        report.val_mse.append(v)
        report.grad_norm.append(gnorm)
        params = snapshot(model)
        if terms["total"] < best_train.train_loss:
            best_train = Checkpoint("best_train", epoch, params, terms["total"], v)
        if val_w is not None and (v < best_val.val_mse or best_val.epoch == 0):
            best_val = Checkpoint("best_val", epoch, params, terms["total"], v)
        last = Checkpoint("last", epoch, params, terms["total"], v)
        if log is not None:
            log(f"{variant} seed {seed} epoch {epoch}/{epochs} loss {terms['total']:.5f} "
                f"val {v:.5f} ({report.epoch_time[-1]:.2f}s)")
    if val_w is None:
        best_val = Checkpoint("best_val", best_train.epoch, best_train.params,
                              best_train.train_loss, best_train.val_mse)
    final = snapshot(model)
    for ck in (best_train, best_val, last):
        restore(model, ck.params)
        ck.test = evaluate(model, data, test_w)
        report.checkpoints[ck.tag] = ck
    report.best = min(CHECKPOINT_TAGS, key=lambda t: (report.checkpoints[t].test.mae,
                                                       CHECKPOINT_TAGS.index(t)))
    restore(model, final)
    return report


def standard_windows(split: DatasetSplit) -> tuple[Window, Window, Window]:
    (_, tr), (v0, v1), (t0, t1) = split.train, split.validation, split.test
    return Window(0, tr, 0), Window(0, v1, v0), Window(0, t1, t0)


def train(data: PreparedData, cfg: RunConfig, log=None):
    """Build and train a model on the standard split; returns (model, report)."""
    model = build_model(cfg, data)
    tr, va, te = standard_windows(data.split)
    report = fit(model, data, tr, va, te, cfg.epochs, cfg.lr, cfg.seed, cfg.variant, log)
    return model, report


def baseline_gru(data: PreparedData, cfg: RunConfig, log=None):
    return train(data, cfg.replace(model="gru"), log)
