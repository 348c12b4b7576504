"""Regression with a spatially misaligned regressor."""

__version__ = "0.1.0"
