"""Forecasting networks and their loss functions."""

from .baseline import BaselineConfig, GRUBaseline
from .layers import gat, gru_step, latency_decay, mlp
from .popnet import (
    LossTerms, ModelConfig, ModelInputs, ModelOutput, PopNet, alignment_loss, horizon_targets,
    kl_divergence, mse, temporal_decay, total_loss,
)

__all__ = [
    "BaselineConfig", "GRUBaseline", "LossTerms", "ModelConfig", "ModelInputs", "ModelOutput",
    "PopNet", "alignment_loss", "gat", "gru_step", "horizon_targets", "kl_divergence",
    "latency_decay", "mlp", "mse", "temporal_decay", "total_loss",
]
