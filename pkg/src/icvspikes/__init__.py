"""Spike-aware spectrum estimation for high-dimensional integrated covariance matrices."""

__version__ = "0.1.0"
