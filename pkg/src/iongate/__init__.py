"""Smooth state-dependent force design and simulation for two-ion phase gates."""

__version__ = "0.1.0"
