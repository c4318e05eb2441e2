"""Numerical algebraic dichotomies and topological conjugacy for nonautonomous ODEs."""

__version__ = "0.1.0"
