"""Federated learning with learned aggregation weights and local-training strategies."""

__version__ = "0.1.0"
