"""Numerical laboratory for the biharmonic Gel'fand equation Δ²u = e^u."""

__version__ = "0.1.0"
