"""Numerical laboratory for entropic interpolation on discrete metric measure spaces."""

__version__ = "0.1.0"
