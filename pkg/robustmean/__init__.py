"""Simulation lab for robust distributed mean estimation with adversarial workers."""

__version__ = "0.1.0"

__all__ = ["__version__"]
