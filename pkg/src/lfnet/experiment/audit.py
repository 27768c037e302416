"""Finite-difference audit of the full model on a tiny instance."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..autodiff import GradcheckReport, gradcheck, relative_error
from ..model import ModelConfig, ModelInputs, PopNet, horizon_targets, total_loss

# Below this gradient magnitude the central difference at step 1e-5 carries
# rounding noise of about 1e-11, so the relative error is taken against the floor.
GRADIENT_FLOOR = 1e-6
TINY = dict(sie_dim=3, gat_dim=3, heads=2, att_dim=3, hidden=4, filters=2, head_width=4)


def tiny_instance(seed: int = 0, nodes: int = 3, steps: int = 4, features: int = 2):
    """Path graph over ``nodes`` locations with random inputs, latencies and targets."""
    rng = np.random.default_rng(seed)
    edges = [(i, i + 1) for i in range(nodes - 1)]
    dst = list(range(nodes)) + [a for i, j in edges for a in (i, j)]
    src = list(range(nodes)) + [b for i, j in edges for b in (j, i)]
    inp = ModelInputs(rng.normal(size=(nodes, steps, features)), rng.normal(size=(nodes, steps, features)),
                      rng.integers(0, 6, size=(nodes, steps)), rng.normal(size=(nodes, 3)),
                      np.array(dst), np.array(src))
    y = rng.normal(size=(nodes, steps + 1))
    return inp, y, 0.8 * y + 0.1 * rng.normal(size=y.shape)


@dataclass
class AuditResult:
    report: GradcheckReport
    num_parameters: int
    seconds: float

    @property
    def worst_rel_error(self) -> float:
        return self.report.worst_rel_error

    @property
    def worst_abs_error(self) -> float:
        return max((abs(p.analytic - p.numeric) for p in self.report.checked), default=0.0)

    @property
    def worst_unfloored_rel_error(self) -> float:
        return max((relative_error(p.analytic, p.numeric) for p in self.report.checked), default=0.0)

    def summary(self) -> dict:
        w = self.report.worst
        return {"worst_rel_error": self.worst_rel_error, "worst_parameter": None if w is None else w.name,
                "gradient_floor": GRADIENT_FLOOR, "worst_abs_error": self.worst_abs_error,
                "worst_unfloored_rel_error": self.worst_unfloored_rel_error,
                "checked": len(self.report.checked), "kinks_skipped": len(self.report.skipped),
                "nonfinite": len(self.report.failed), "num_parameters": self.num_parameters,
                "seconds": self.seconds}


def gradient_audit(seed: int = 0, step: float = 1e-5, horizon: int = 1,
                   floor: float = GRADIENT_FLOOR) -> AuditResult:
    """Perturb every parameter coordinate of a small full model (both losses, all modules on)."""
    inp, y, y_aux = tiny_instance(seed)
    N, T, F = inp.x.shape
    model = PopNet(ModelConfig(F, inp.spatial.shape[1], horizon=horizon, **TINY), seed)
    Y, M = horizon_targets(y, horizon, 0, T, 0, y.shape[1])
    Ya, _ = horizon_targets(y_aux, horizon, 0, T, 0, y.shape[1])

    def loss():
        return total_loss(model.forward(inp, losses=True), Y, Ya, M[None]).total

    t0 = time.perf_counter()
    report = gradcheck(loss, model.params, step=step, floor=floor)
    return AuditResult(report, model.num_parameters, time.perf_counter() - t0)
