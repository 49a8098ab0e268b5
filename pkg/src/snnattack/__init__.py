"""Gradient-based adversarial attacks on spiking neural networks."""

__version__ = "0.1.0"
