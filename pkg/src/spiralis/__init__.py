"""Numerical construction of self-similar 2d Euler flows whose vorticity
stratifies into algebraic spirals."""

__version__ = "0.1.0"
