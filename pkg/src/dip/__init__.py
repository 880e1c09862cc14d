"""Directional spatiotemporal inconsistency detection for short video clips."""

__version__ = "0.1.0"

from .tensor import NumericsError, Tensor, no_grad

__all__ = ["NumericsError", "Tensor", "no_grad", "__version__"]
