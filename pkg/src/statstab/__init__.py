"""Inducing schemes and statistical-stability diagnostics for one-dimensional maps."""

__version__ = "0.1.0"
