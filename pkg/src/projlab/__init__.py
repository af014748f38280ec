"""Simulated projector-based adversarial patch experiments."""

__version__ = "0.1.0"
