"""Numerical laboratory for inverse coefficient problems of the transport equation."""

__version__ = "0.1.0"
