"""Sparse autoencoders seen as piecewise-affine splines."""

__version__ = "0.1.0"
