"""Wearable freezing-of-gait detection: signals, edge CNN, compression, evaluation, body-area network simulation."""

__version__ = "0.1.0"
