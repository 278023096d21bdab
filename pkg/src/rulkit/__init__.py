"""Uncertainty-aware remaining useful life prediction for CMAPSS turbofan engines."""

__version__ = "0.1.0"
