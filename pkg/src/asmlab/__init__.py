"""Adaptive sample mining for noisy-label classification on synthetic data."""

__version__ = "0.1.0"
