"""Systemic risk measures with neural primal and dual solvers."""

__version__ = "0.1.0"
