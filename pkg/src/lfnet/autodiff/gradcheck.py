"""Central finite-difference verification of taped gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from .tensor import NonFiniteError, Tape, Tensor, backward

LossFn = Callable[[], Tensor]


@dataclass
class ProbeResult:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float
    status: str = "ok"  # "ok" | "kink" | "nonfinite"


@dataclass
class GradcheckReport:
    probes: list[ProbeResult] = field(default_factory=list)

    @property
    def checked(self) -> list[ProbeResult]:
        return [p for p in self.probes if p.status == "ok"]

    @property
    def skipped(self) -> list[ProbeResult]:
        return [p for p in self.probes if p.status == "kink"]

    @property
    def failed(self) -> list[ProbeResult]:
        return [p for p in self.probes if p.status == "nonfinite"]

    @property
    def worst(self) -> Optional[ProbeResult]:
        ok = self.checked
        return max(ok, key=lambda p: p.rel_error) if ok else None

    @property
    def worst_rel_error(self) -> float:
        w = self.worst
        return 0.0 if w is None else w.rel_error


def relative_error(analytic: float, numeric: float, floor: float = 1e-12) -> float:
    """``|a - n| / max(|a|, |n|, floor)``; the floor turns near-zero gradients into an absolute check."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _run(loss_fn: LossFn) -> tuple[float, list[np.ndarray]]:
    with Tape() as tape:
        loss = loss_fn()
    return loss.item(), tape.kink_signature()


def _same_kinks(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y)
                                     for x, y in zip(a, b))


def finite_difference_check(loss_fn: LossFn, param: Tensor, index: tuple,
                            step: float = 1e-5, analytic: Optional[float] = None,
                            base_kinks: Optional[list[np.ndarray]] = None,
                            name: str = "", floor: float = 1e-12) -> ProbeResult:
    """Compare one gradient coordinate against a central difference.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    A probe whose perturbation flips the sign of any LeakyReLU input (or sits
    on its kink) is reported with status ``"kink"``; a non-finite loss at a
    perturbed point gives status ``"nonfinite"``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if analytic is None or base_kinks is None:
        with Tape() as tape:
            loss = loss_fn()
        base_kinks = tape.kink_signature()
        analytic = float(backward(tape, loss, [param])[param][index])
    old = param.value[index]
    try:
        param.value[index] = old + step
        up, kinks_up = _run(loss_fn)
        param.value[index] = old - step
        down, kinks_down = _run(loss_fn)
    except NonFiniteError:
        return ProbeResult(name, index, analytic, float("nan"), float("inf"), "nonfinite")
    finally:
        param.value[index] = old
    numeric = (up - down) / (2.0 * step)
    if not np.isfinite(numeric):
        return ProbeResult(name, index, analytic, numeric, float("inf"), "nonfinite")
    if not (_same_kinks(base_kinks, kinks_up) and _same_kinks(base_kinks, kinks_down)):
        return ProbeResult(name, index, analytic, numeric, relative_error(analytic, numeric, floor), "kink")
    return ProbeResult(name, index, analytic, numeric, relative_error(analytic, numeric, floor))


def gradcheck(loss_fn: LossFn, params: Mapping[str, Tensor], step: float = 1e-5,
              probes: Optional[int] = None, rng: Optional[np.random.Generator] = None,
              names: Optional[Iterable[str]] = None, floor: float = 1e-12) -> GradcheckReport:
    """Audit gradients of ``loss_fn`` over parameter coordinates.

    With ``probes=None`` every coordinate of every parameter is perturbed;
    otherwise ``probes`` coordinates are drawn uniformly with ``rng``.
    """
    with Tape() as tape:
        loss = loss_fn()
    kinks = tape.kink_signature()
    selected = dict(params) if names is None else {n: params[n] for n in names}
    grads = backward(tape, loss, list(selected.values()))
    coords = [(n, idx) for n, p in selected.items() for idx in np.ndindex(p.shape)]
    if probes is not None and probes < len(coords):
        rng = rng or np.random.default_rng(0)
        coords = [coords[i] for i in rng.choice(len(coords), size=probes, replace=False)]
    report = GradcheckReport()
    for n, idx in coords:
        p = selected[n]
        report.probes.append(finite_difference_check(
            loss_fn, p, idx, step, float(grads[p][idx]), kinks, name=n, floor=floor))
    return report
