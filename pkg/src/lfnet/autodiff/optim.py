"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def arrays(self) -> dict[str, np.ndarray]:
        """Moments flattened into one name -> array map for serialization."""
        out = {f"adam.m.{k}": a for k, a in self.m.items()}
        out.update({f"adam.v.{k}": a for k, a in self.v.items()})
        out["adam.step"] = np.array([float(self.step)])
        return out

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for key, a in arrays.items():
            if key.startswith("adam.m."):
                self.m[key[7:]] = np.array(a)
            elif key.startswith("adam.v."):
                self.v[key[7:]] = np.array(a)
        if "adam.step" in arrays:
            self.step = int(arrays["adam.step"][0])


class Adam:
    """Adam over a name -> parameter map. Updates parameter values in place."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.value)
            self.state.v[name] = np.zeros_like(p.value)

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        s = self.state
        for name in grads:
            if name not in self.params:
                raise KeyError(f"gradient for unknown parameter {name!r}")
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.value.shape:
                raise ShapeError(f"adam: gradient shape {g.shape} does not match parameter "
                                 f"{name!r} shape {p.value.shape}")
        s.step += 1
        c1 = 1.0 - s.beta1 ** s.step
        c2 = 1.0 - s.beta2 ** s.step
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = s.m[name] = s.beta1 * s.m[name] + (1.0 - s.beta1) * g
            v = s.v[name] = s.beta2 * s.v[name] + (1.0 - s.beta2) * g * g
            p.value -= s.lr * (m / c1) / (np.sqrt(v / c2) + s.eps)
