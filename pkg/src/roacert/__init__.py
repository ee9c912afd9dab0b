"""Finite-time region-of-attraction certification via sum-of-squares programming."""

__version__ = "0.1.0"
