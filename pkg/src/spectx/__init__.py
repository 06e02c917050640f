"""Adaptive context-length selection for multi-agent RL via spectral history features."""

__version__ = "0.1.0"

from .errors import DivergenceError, ValidationError

__all__ = ["DivergenceError", "ValidationError", "__version__"]
