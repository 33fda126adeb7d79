"""Distributed stochastic approximation with expanding truncations."""

__version__ = "0.1.0"
