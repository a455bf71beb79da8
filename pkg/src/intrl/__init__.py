"""Integral reinforcement learning with pluggable quadrature rules."""
__version__ = "0.1.0"
