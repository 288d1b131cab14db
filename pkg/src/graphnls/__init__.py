"""Coupled nonlinear Schrodinger equations on a star graph with delta coupling."""

__version__ = "0.1.0"
