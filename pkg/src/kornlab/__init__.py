"""Numerical laboratory for Korn-type inequalities."""

__version__ = "0.1.0"
