"""Numerical laboratory for nonlocal perimeters on grids."""

__version__ = "0.1.0"
