"""Learnable gamma and green-guided enhancement for packed RAW Bayer images."""

__version__ = "0.1.0"
