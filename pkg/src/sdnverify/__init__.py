"""Sliding Door Networks with rule back-propagation and region-based
global robustness verification."""

__version__ = "0.1.0"
