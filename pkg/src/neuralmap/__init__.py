"""Uncertainty-aware 2.5-D elevation mapping toolkit."""

__version__ = "0.1.0"
