"""Simulation and statistical-verification lab for compound mixed Poisson risk processes."""

__version__ = "0.1.0"
