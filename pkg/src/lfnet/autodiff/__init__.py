"""Minimal reverse-mode differentiation on numpy float64 arrays."""

from . import ops
from .gradcheck import GradcheckReport, ProbeResult, finite_difference_check, gradcheck, relative_error
from .optim import Adam, AdamState
from .serialize import load_arrays, save_arrays
from .tensor import NonFiniteError, ShapeError, Tape, Tensor, as_tensor, backward, parameter

__all__ = [
    "Adam", "AdamState", "GradcheckReport", "NonFiniteError", "ProbeResult", "ShapeError",
    "Tape", "Tensor", "as_tensor", "backward", "finite_difference_check", "gradcheck",
    "load_arrays", "ops", "parameter", "relative_error", "save_arrays",
]
