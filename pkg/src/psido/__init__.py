"""Pseudodifferential calculus on exponential manifolds, sampled on grids."""

__version__ = "0.1.0"

from . import compose, geometry, grids, linearizations, quantize, verify  # noqa: E402,F401
