"""Latency-aware forecasting of revised population time series."""

__version__ = "0.1.0"
