"""Continual anomaly detection for network flows under normality shift."""

__version__ = "0.1.0"
