"""Perceptual error redistribution for Monte Carlo images."""

__version__ = "0.1.0"
